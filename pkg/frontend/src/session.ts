/** Client-side state machine for one annotator's pass through the study.
 *
 * All progress lives server-side; this object only tracks the assignment
 * currently on screen and the scores entered for it, so a refresh or crash
 * loses at most the unsubmitted form. Panels are positional ("Response 1" /
 * "Response 2"); the client never learns which model produced which output.
 */

import { ApiClient, Assignment, ScoreBlock } from "./api.js";

export type Phase = "loading" | "rating" | "done" | "error";

export const PANELS = 2;

export interface SessionState {
  phase: Phase;
  assignment: Assignment | null;
  /** scores[panel][axisIndex] = 1..5 or null until chosen */
  scores: (number | null)[][];
  submitted: number;
  notice: string | null; // inline validation message
  error: string | null; // network-level failure -> retry banner
  stats: unknown | null; // populated on the done screen
}

type Listener = (state: SessionState) => void;

export class AnnotationSession {
  private state: SessionState;
  private listeners: Listener[] = [];
  private pendingSubmit = false;

  constructor(
    private readonly api: ApiClient,
    readonly annotatorId: string,
  ) {
    this.state = {
      phase: "loading",
      assignment: null,
      scores: [],
      submitted: 0,
      notice: null,
      error: null,
      stats: null,
    };
  }

  snapshot(): SessionState {
    return this.state;
  }

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private update(patch: Partial<SessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  private emptyScores(assignment: Assignment): (number | null)[][] {
    return Array.from({ length: PANELS }, () =>
      assignment.axes.map(() => null),
    );
  }

  async start(): Promise<void> {
    this.update({ phase: "loading", error: null, notice: null });
    let payload;
    try {
      payload = await this.api.assignment(this.annotatorId);
    } catch (err) {
      this.update({ phase: "error", error: `Could not reach the service: ${String(err)}` });
      return;
    }
    if (payload.done) {
      let stats: unknown = null;
      try {
        stats = await this.api.stats();
      } catch {
        stats = null; // the done screen still renders without stats
      }
      this.update({ phase: "done", assignment: null, scores: [], stats });
      return;
    }
    this.update({
      phase: "rating",
      assignment: payload,
      scores: this.emptyScores(payload),
      notice: null,
      error: null,
    });
  }

  setScore(panel: number, axisIndex: number, value: number): void {
    const { assignment, scores } = this.state;
    if (!assignment || this.state.phase !== "rating") {
      return;
    }
    if (panel < 0 || panel >= PANELS || axisIndex < 0 || axisIndex >= assignment.axes.length) {
      return;
    }
    if (!Number.isInteger(value) || value < 1 || value > 5) {
      return;
    }
    const next = scores.map((row) => [...row]);
    next[panel][axisIndex] = value;
    this.update({ scores: next, notice: null });
  }

  /** Keyboard entry: a digit fills the first unscored cell in reading order. */
  pressKey(value: number): void {
    const { assignment, scores } = this.state;
    if (!assignment || this.state.phase !== "rating") {
      return;
    }
    for (let panel = 0; panel < PANELS; panel++) {
      for (let axis = 0; axis < assignment.axes.length; axis++) {
        if (scores[panel][axis] === null) {
          this.setScore(panel, axis, value);
          return;
        }
      }
    }
  }

  allScored(): boolean {
    const { assignment, scores } = this.state;
    if (!assignment) {
      return false;
    }
    return scores.every((row) => row.every((v) => v !== null));
  }

  private scoreBlock(panel: number): ScoreBlock {
    const { assignment, scores } = this.state;
    const block: ScoreBlock = {};
    assignment!.axes.forEach((axis, i) => {
      block[axis] = scores[panel][i] as number;
    });
    return block;
  }

  async submitAndAdvance(): Promise<void> {
    const { assignment } = this.state;
    if (!assignment || this.state.phase !== "rating" || this.pendingSubmit) {
      return;
    }
    if (!this.allScored()) {
      this.update({ notice: "Score every factor for both responses before submitting." });
      return;
    }
    this.pendingSubmit = true;
    let result;
    try {
      result = await this.api.submitRating({
        item_id: assignment.item_id,
        annotator_id: this.annotatorId,
        scores: {
          response_1: this.scoreBlock(0),
          response_2: this.scoreBlock(1),
        },
      });
    } catch (err) {
      // network failure: keep the form state so nothing is lost
      this.pendingSubmit = false;
      this.update({ phase: "error", error: `Submission failed: ${String(err)}` });
      return;
    }
    this.pendingSubmit = false;
    if (result.status === 201 || result.status === 409) {
      // 409 means the rating is already stored (e.g. a resubmit after a
      // dropped connection); either way the item is complete, move on.
      this.update({ submitted: this.state.submitted + (result.status === 201 ? 1 : 0) });
      await this.start();
      return;
    }
    const detail =
      result.body && typeof result.body === "object" && "error" in (result.body as object)
        ? String((result.body as { error: unknown }).error)
        : `HTTP ${result.status}`;
    this.update({ notice: `The service rejected the rating: ${detail}` });
  }

  /** Retry after a network failure; form state is intact by construction. */
  async retry(): Promise<void> {
    if (this.state.phase !== "error") {
      return;
    }
    if (this.state.assignment !== null) {
      this.update({ phase: "rating", error: null });
      await this.submitAndAdvance();
    } else {
      await this.start();
    }
  }
}
