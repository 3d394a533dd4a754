import type { AttemptResponse, Reason, SessionDoc } from "./types.js";

/**
 * Pure UI state machine for one capture session.
 *
 * Phases move capture → preview → waiting → (feedback → capture | done).
 * Attempt counters are copied verbatim from server responses; no event in
 * this module ever increments them locally, so the UI can never disagree
 * with the service about how many attempts remain.
 */

export type Phase = "capture" | "preview" | "waiting" | "feedback" | "done";

export type Outcome = "accepted" | "exhausted";

export interface UiSessionState {
  session_id: string | null;
  /** Number of the most recent server-judged attempt; 0 before any verdict. */
  attempt_number: number;
  remaining_attempts: number;
  attempt_cap: number;
  last_reasons: Reason[];
  phase: Phase;
  /** Set once phase becomes done. */
  outcome: Outcome | null;
  /** Banner text for a recoverable failure (network, undecodable upload). */
  error: string | null;
}

export type UiEvent =
  | { kind: "photo_taken" }
  | { kind: "retake" }
  | { kind: "submit_started" }
  | { kind: "server_verdict"; response: AttemptResponse }
  | { kind: "request_failed"; message: string }
  | { kind: "session_loaded"; doc: SessionDoc };

export function initialState(): UiSessionState {
  return {
    session_id: null,
    attempt_number: 0,
    remaining_attempts: 0,
    attempt_cap: 0,
    last_reasons: [],
    phase: "capture",
    outcome: null,
    error: null,
  };
}

/** True when the state machine allows starting a submission right now. */
export function canSubmit(state: UiSessionState): boolean {
  return state.phase === "preview" && state.remaining_attempts > 0;
}

/** True when the user may take (or retake) a photo. */
export function canCapture(state: UiSessionState): boolean {
  return state.phase === "capture";
}

/**
 * Total transition function: events that are not legal in the current phase
 * leave the state unchanged, so stray clicks and late callbacks are inert.
 */
export function reduce(state: UiSessionState, event: UiEvent): UiSessionState {
  switch (event.kind) {
    case "photo_taken":
      if (state.phase !== "capture") return state;
      return { ...state, phase: "preview", error: null };
    case "retake":
      if (state.phase !== "preview" && state.phase !== "feedback") return state;
      return { ...state, phase: "capture", error: null };
    case "submit_started":
      if (!canSubmit(state)) return state;
      return { ...state, phase: "waiting", error: null };
    case "server_verdict": {
      if (state.phase !== "waiting") return state;
      const r = event.response;
      const base = {
        ...state,
        attempt_number: r.attempt_number,
        remaining_attempts: r.remaining_attempts,
        last_reasons: [...r.reasons],
        error: null,
      };
      if (r.accepted) return { ...base, phase: "done", outcome: "accepted" };
      if (r.session_state === "exhausted") return { ...base, phase: "done", outcome: "exhausted" };
      return { ...base, phase: "feedback" };
    }
    case "request_failed":
      if (state.phase !== "waiting") return state;
      // The server recorded nothing, so counters stay untouched and the
      // pending photo can simply be submitted again.
      return { ...state, phase: "preview", error: event.message };
    case "session_loaded":
      return stateFromDoc(event.doc);
  }
}

/**
 * Rebuild the UI state a page reload should show, from the session document
 * alone. This is what makes `GET /v1/sessions/{id}` after a reload land the
 * user on the same screen.
 */
export function stateFromDoc(doc: SessionDoc): UiSessionState {
  const last = doc.attempts.length > 0 ? doc.attempts[doc.attempts.length - 1] : undefined;
  const base: UiSessionState = {
    session_id: doc.session_id,
    attempt_number: doc.attempts.length,
    remaining_attempts: doc.remaining_attempts,
    attempt_cap: doc.attempt_cap,
    last_reasons: last ? [...last.verdict.reasons] : [],
    phase: "capture",
    outcome: null,
    error: null,
  };
  if (doc.state === "accepted") return { ...base, phase: "done", outcome: "accepted" };
  if (doc.state === "exhausted") return { ...base, phase: "done", outcome: "exhausted" };
  if (doc.attempts.length > 0) return { ...base, phase: "feedback" };
  return base;
}
