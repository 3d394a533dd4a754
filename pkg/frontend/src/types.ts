/** Wire types for the capture service HTTP API (v1). */

export type Reason = "blur" | "lighting" | "zoom_crop" | "other";

export type ServerSessionState = "active" | "accepted" | "exhausted";

/** Body of `POST /v1/sessions` (201). */
export interface CreateSessionResponse {
  session_id: string;
}

/** Body of `POST /v1/sessions/{id}/attempts`. */
export interface AttemptResponse {
  attempt_number: number;
  accepted: boolean;
  reasons: Reason[];
  remaining_attempts: number;
  session_state: ServerSessionState;
}

export interface VerdictDoc {
  overall_score: number;
  is_poor: boolean;
  reasons: Reason[];
  reason_scores: Record<string, number>;
  quality_letter_hint: string | null;
}

export interface AttemptDoc {
  attempt_number: number;
  image_ref: string;
  received_at: number;
  verdict: VerdictDoc;
}

/** Body of `GET /v1/sessions/{id}`. */
export interface SessionDoc {
  session_id: string;
  state: ServerSessionState;
  created_at: number;
  updated_at: number;
  attempts: AttemptDoc[];
  final_attempt_index: number | null;
  remaining_attempts: number;
  attempt_cap: number;
  extra_time: number;
}

/** Body of `GET /v1/healthz`. */
export interface HealthResponse {
  status: string;
  model_version: string;
}

/** Error body shape shared by all non-2xx service responses. */
export interface ApiErrorBody {
  error: string;
  message: string;
}
