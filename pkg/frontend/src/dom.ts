/** DOM rendering for the annotation session; no framework, full re-render.
 *
 * Model outputs are always inserted via textContent, never markup, so the
 * client cannot be used to smuggle content into the page.
 */

import { AnnotationSession, PANELS, SessionState } from "./session.js";

const PANEL_LABELS = ["Response 1", "Response 2"];
const SCORE_VALUES = [1, 2, 3, 4, 5];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderHeader(state: SessionState): HTMLElement {
  const header = el("header", "top-bar");
  header.appendChild(el("h1", "title", "Chart output rating"));
  const progress = state.assignment?.progress;
  if (progress) {
    header.appendChild(
      el("span", "progress", `Item ${progress.done + 1} of ${progress.total}`),
    );
  }
  return header;
}

function renderScoreRow(
  session: AnnotationSession,
  state: SessionState,
  panel: number,
  axisIndex: number,
  axis: string,
): HTMLElement {
  const row = el("div", "axis-row");
  row.appendChild(el("span", "axis-name", axis));
  const group = el("div", "score-group");
  for (const value of SCORE_VALUES) {
    const button = el("button", "score", String(value));
    button.type = "button";
    const selected = state.scores[panel]?.[axisIndex] === value;
    if (selected) {
      button.classList.add("selected");
    }
    button.setAttribute("aria-pressed", String(selected));
    button.addEventListener("click", () => session.setScore(panel, axisIndex, value));
    group.appendChild(button);
  }
  row.appendChild(group);
  return row;
}

function renderPanel(
  session: AnnotationSession,
  state: SessionState,
  panel: number,
): HTMLElement {
  const assignment = state.assignment!;
  const section = el("section", "panel");
  section.appendChild(el("h2", "panel-label", PANEL_LABELS[panel]));
  section.appendChild(el("p", "output-text", assignment.responses[panel]));
  const scores = el("div", "axes");
  assignment.axes.forEach((axis, axisIndex) => {
    scores.appendChild(renderScoreRow(session, state, panel, axisIndex, axis));
  });
  section.appendChild(scores);
  return section;
}

function renderRating(session: AnnotationSession, state: SessionState): HTMLElement {
  const assignment = state.assignment!;
  const main = el("main", "rating");

  const figure = el("figure", "chart");
  const img = el("img");
  img.src = assignment.chart_url;
  img.alt = "Chart under evaluation";
  figure.appendChild(img);
  main.appendChild(figure);

  const panels = el("div", "panels");
  for (let panel = 0; panel < PANELS; panel++) {
    panels.appendChild(renderPanel(session, state, panel));
  }
  main.appendChild(panels);

  if (state.notice) {
    main.appendChild(el("p", "notice", state.notice));
  }

  const controls = el("div", "controls");
  const submit = el("button", "submit", "Submit and next");
  submit.type = "button";
  submit.disabled = !session.allScored();
  submit.addEventListener("click", () => void session.submitAndAdvance());
  controls.appendChild(submit);
  controls.appendChild(
    el("span", "hint", "Keys 1-5 fill the next score; Enter submits."),
  );
  main.appendChild(controls);
  return main;
}

function statsNumber(value: unknown): string {
  return typeof value === "number" ? value.toFixed(3) : "n/a";
}

function renderStats(stats: unknown): HTMLElement {
  const box = el("div", "stats");
  if (!stats || typeof stats !== "object") {
    box.appendChild(el("p", undefined, "Statistics are not available."));
    return box;
  }
  const data = stats as {
    axes?: string[];
    means?: Record<string, Record<string, number>>;
    kappa?: { pooled?: { kappa?: number } | null } | null;
    mann_whitney?: Record<string, { p_value?: number }>;
  };
  const axes = data.axes ?? [];
  const means = data.means ?? {};
  const table = el("table", "stats-table");
  const head = el("tr");
  head.appendChild(el("th", undefined, "Candidate"));
  for (const axis of axes) {
    head.appendChild(el("th", undefined, axis));
  }
  table.appendChild(head);
  for (const candidate of Object.keys(means).sort()) {
    const row = el("tr");
    row.appendChild(el("td", undefined, candidate));
    for (const axis of axes) {
      row.appendChild(el("td", undefined, statsNumber(means[candidate]?.[axis])));
    }
    table.appendChild(row);
  }
  box.appendChild(table);
  box.appendChild(
    el("p", undefined, `Inter-annotator agreement (kappa): ${statsNumber(data.kappa?.pooled?.kappa)}`),
  );
  const mw = data.mann_whitney ?? {};
  for (const axis of axes) {
    box.appendChild(
      el("p", undefined, `Rank-test p-value, ${axis}: ${statsNumber(mw[axis]?.p_value)}`),
    );
  }
  return box;
}

function renderDone(state: SessionState): HTMLElement {
  const main = el("main", "done");
  main.appendChild(el("h2", undefined, "Study complete"));
  main.appendChild(el("p", undefined, "Every item has been rated. Thank you!"));
  main.appendChild(renderStats(state.stats));
  return main;
}

function renderError(session: AnnotationSession, state: SessionState): HTMLElement {
  const banner = el("main", "error-banner");
  banner.appendChild(el("p", undefined, state.error ?? "Something went wrong."));
  banner.appendChild(
    el("p", "hint", "Your scores are preserved; retry when the connection is back."),
  );
  const retry = el("button", "retry", "Retry");
  retry.type = "button";
  retry.addEventListener("click", () => void session.retry());
  banner.appendChild(retry);
  return banner;
}

export function render(session: AnnotationSession, root: HTMLElement): void {
  const state = session.snapshot();
  root.replaceChildren();
  root.appendChild(renderHeader(state));
  switch (state.phase) {
    case "loading":
      root.appendChild(el("main", "loading", "Loading assignment..."));
      break;
    case "rating":
      root.appendChild(renderRating(session, state));
      break;
    case "done":
      root.appendChild(renderDone(state));
      break;
    case "error":
      root.appendChild(renderError(session, state));
      break;
  }
}
