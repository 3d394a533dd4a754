import type { CameraSource } from "./camera.js";
import { COPY, REASON_COPY, attemptCounter } from "./copy.js";
import type { UiSessionState } from "./state.js";

/**
 * DOM renderer: one single-column screen per phase, rebuilt from state on
 * every change. No framework — the state machine is small enough that a
 * full rebuild is simpler and keeps markup and state trivially in sync.
 */

export interface RenderHandlers {
  onCapture(): void;
  onRetake(): void;
  onSubmit(): void;
}

export interface RenderContext {
  camera: CameraSource | null;
  pendingImage: Blob | null;
  handlers: RenderHandlers;
}

let lastObjectUrl: string | null = null;

function previewUrl(image: Blob): string | null {
  // jsdom has no object URLs; the <img> is simply left without a src there.
  if (typeof URL === "undefined" || typeof URL.createObjectURL !== "function") return null;
  if (lastObjectUrl && typeof URL.revokeObjectURL === "function") {
    URL.revokeObjectURL(lastObjectUrl);
  }
  lastObjectUrl = URL.createObjectURL(image);
  return lastObjectUrl;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

function button(
  doc: Document,
  label: string,
  testid: string,
  onClick: () => void,
  disabled = false,
): HTMLButtonElement {
  const node = el(doc, "button", { type: "button", "data-testid": testid }, label);
  node.disabled = disabled;
  node.addEventListener("click", onClick);
  return node;
}

export function render(root: HTMLElement, state: UiSessionState, ctx: RenderContext): void {
  const doc = root.ownerDocument;
  root.textContent = "";
  const main = el(doc, "main", { class: "screen", "data-phase": state.phase });
  main.appendChild(el(doc, "h1", {}, COPY.title));

  if (state.error) {
    main.appendChild(el(doc, "p", { class: "error", "data-testid": "error-banner" }, state.error));
  }

  switch (state.phase) {
    case "capture": {
      const hint = ctx.camera?.kind === "file" ? COPY.filePickerHint : COPY.captureHint;
      main.appendChild(el(doc, "p", { class: "hint" }, hint));
      if (ctx.camera) {
        const mountWrap = el(doc, "div", { class: "camera", "data-testid": "camera-mount" });
        mountWrap.appendChild(ctx.camera.mount());
        main.appendChild(mountWrap);
      }
      main.appendChild(button(doc, COPY.captureButton, "capture-btn", ctx.handlers.onCapture));
      main.appendChild(
        el(doc, "p", { class: "note", "data-testid": "remaining" },
          COPY.remainingNote(state.remaining_attempts)),
      );
      break;
    }
    case "preview":
    case "waiting": {
      main.appendChild(el(doc, "p", { class: "hint" }, COPY.previewHint));
      const img = el(doc, "img", { class: "preview", "data-testid": "preview-img", alt: "Your photo" });
      if (ctx.pendingImage) {
        const url = previewUrl(ctx.pendingImage);
        if (url) img.setAttribute("src", url);
      }
      main.appendChild(img);
      const waiting = state.phase === "waiting";
      const row = el(doc, "div", { class: "actions" });
      row.appendChild(button(doc, COPY.retakeButton, "retake-btn", ctx.handlers.onRetake, waiting));
      row.appendChild(button(doc, COPY.submitButton, "submit-btn", ctx.handlers.onSubmit, waiting));
      main.appendChild(row);
      if (waiting) {
        main.appendChild(el(doc, "p", { class: "note", "data-testid": "waiting-note" }, COPY.waiting));
      }
      break;
    }
    case "feedback": {
      main.appendChild(el(doc, "h2", {}, COPY.feedbackHeading));
      main.appendChild(
        el(doc, "p", { class: "counter", "data-testid": "attempt-counter" },
          attemptCounter(state.attempt_number, state.attempt_cap)),
      );
      const list = el(doc, "ul", { class: "reasons", "data-testid": "reason-list" });
      for (const reason of state.last_reasons) {
        list.appendChild(el(doc, "li", { "data-reason": reason }, REASON_COPY[reason]));
      }
      main.appendChild(list);
      main.appendChild(button(doc, COPY.tryAgainButton, "try-again-btn", ctx.handlers.onRetake));
      main.appendChild(
        el(doc, "p", { class: "note", "data-testid": "remaining" },
          COPY.remainingNote(state.remaining_attempts)),
      );
      break;
    }
    case "done": {
      if (state.outcome === "accepted") {
        main.appendChild(el(doc, "h2", { "data-testid": "done-heading" }, COPY.accepted));
        main.appendChild(el(doc, "p", {}, COPY.acceptedDetail));
      } else {
        main.appendChild(el(doc, "h2", { "data-testid": "done-heading" }, COPY.exhaustedHeading));
        main.appendChild(el(doc, "p", { "data-testid": "exhausted-note" }, COPY.exhaustedDetail));
      }
      break;
    }
  }

  root.appendChild(main);
}
