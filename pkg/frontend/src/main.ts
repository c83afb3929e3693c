import { ApiClient } from "./api.js";
import { render } from "./dom.js";
import { AnnotationSession } from "./session.js";

function annotatorId(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("annotator");
  if (fromQuery) {
    return fromQuery;
  }
  const stored = window.localStorage.getItem("annotator_id");
  if (stored) {
    return stored;
  }
  const entered = window.prompt("Annotator id:") ?? "";
  window.localStorage.setItem("annotator_id", entered);
  return entered;
}

function bootstrap(): void {
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app mount point");
  }
  const session = new AnnotationSession(new ApiClient(""), annotatorId());
  session.onChange(() => render(session, root));

  document.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLInputElement) {
      return;
    }
    if (event.key >= "1" && event.key <= "5") {
      session.pressKey(Number(event.key));
    } else if (event.key === "Enter") {
      void session.submitAndAdvance();
    }
  });

  render(session, root);
  void session.start();
}

bootstrap();
