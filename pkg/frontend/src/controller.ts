import { ApiRequestError, NetworkError } from "./api.js";
import type { ApiClient } from "./api.js";
import type { CameraSource } from "./camera.js";
import { COPY } from "./copy.js";
import { canCapture, canSubmit, initialState, reduce } from "./state.js";
import type { UiEvent, UiSessionState } from "./state.js";

/**
 * Orchestrates one capture session: camera → preview → submit → feedback.
 *
 * All quality judgment happens on the server; this class only moves state
 * in response to user actions and server replies. It keeps a single request
 * in flight at a time and never starts a submission the server would refuse.
 */

export type SessionApi = Pick<ApiClient, "createSession" | "submitAttempt" | "getSession">;

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export interface FlowDeps {
  api: SessionApi;
  cameraFactory: () => Promise<CameraSource>;
  storage?: StorageLike;
  onChange?: (state: UiSessionState) => void;
}

const STORAGE_KEY = "photoqc.session_id";

/** No-op storage used when none is supplied (e.g. in bare test runs). */
class MemoryStorage implements StorageLike {
  private map = new Map<string, string>();
  getItem(key: string): string | null {
    return this.map.get(key) ?? null;
  }
  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }
  removeItem(key: string): void {
    this.map.delete(key);
  }
}

export class CaptureFlow {
  private readonly api: SessionApi;
  private readonly cameraFactory: () => Promise<CameraSource>;
  private readonly storage: StorageLike;
  private readonly onChange: (state: UiSessionState) => void;

  private _state: UiSessionState = initialState();
  private _pendingImage: Blob | null = null;
  private _camera: CameraSource | null = null;
  private inflight = false;

  constructor(deps: FlowDeps) {
    this.api = deps.api;
    this.cameraFactory = deps.cameraFactory;
    this.storage = deps.storage ?? new MemoryStorage();
    this.onChange = deps.onChange ?? (() => undefined);
  }

  get state(): UiSessionState {
    return this._state;
  }

  get pendingImage(): Blob | null {
    return this._pendingImage;
  }

  get camera(): CameraSource | null {
    return this._camera;
  }

  /**
   * Resume the stored session if the server still knows it, otherwise create
   * a fresh one. Either way the screen is rebuilt purely from the session
   * document the server returns.
   */
  async start(): Promise<void> {
    this._camera = await this.cameraFactory();
    const stored = this.storage.getItem(STORAGE_KEY);
    if (stored) {
      try {
        const doc = await this.api.getSession(stored);
        this.dispatch({ kind: "session_loaded", doc });
        return;
      } catch (exc) {
        if (!(exc instanceof ApiRequestError)) throw exc;
        this.storage.removeItem(STORAGE_KEY);
      }
    }
    const created = await this.api.createSession();
    this.storage.setItem(STORAGE_KEY, created.session_id);
    const doc = await this.api.getSession(created.session_id);
    this.dispatch({ kind: "session_loaded", doc });
  }

  /** Capture one photo from the active source and show the preview. */
  async takePhoto(): Promise<void> {
    if (!canCapture(this._state) || !this._camera) return;
    const image = await this._camera.capture();
    this._pendingImage = image;
    this.dispatch({ kind: "photo_taken" });
  }

  /** Discard the pending photo (or leave feedback) — purely local, no I/O. */
  retake(): void {
    this._pendingImage = null;
    this.dispatch({ kind: "retake" });
  }

  /** Send the pending photo; exactly one request per accepted click. */
  async submit(): Promise<void> {
    if (this.inflight || !canSubmit(this._state) || !this._pendingImage) return;
    const sessionId = this._state.session_id;
    if (!sessionId) return;
    const image = this._pendingImage;
    this.inflight = true;
    this.dispatch({ kind: "submit_started" });
    try {
      const response = await this.api.submitAttempt(sessionId, image);
      this._pendingImage = null;
      this.dispatch({ kind: "server_verdict", response });
    } catch (exc) {
      if (exc instanceof NetworkError) {
        // Nothing was recorded server-side; keep the photo for a retry.
        this.dispatch({ kind: "request_failed", message: COPY.networkRetry });
      } else if (exc instanceof ApiRequestError && exc.status === 422) {
        this.dispatch({ kind: "request_failed", message: COPY.uploadRejected });
      } else if (
        exc instanceof ApiRequestError &&
        (exc.code === "SessionTerminal" || exc.code === "SessionNotFound")
      ) {
        // The UI drifted from server truth (another tab, a restart);
        // resynchronize from the session document.
        await this.resync(sessionId);
      } else {
        this.dispatch({ kind: "request_failed", message: COPY.networkRetry });
      }
    } finally {
      this.inflight = false;
    }
  }

  private async resync(sessionId: string): Promise<void> {
    try {
      const doc = await this.api.getSession(sessionId);
      this._pendingImage = null;
      this.dispatch({ kind: "session_loaded", doc });
    } catch {
      this.dispatch({ kind: "request_failed", message: COPY.networkRetry });
    }
  }

  private dispatch(event: UiEvent): void {
    const next = reduce(this._state, event);
    if (next === this._state) return;
    this._state = next;
    this.onChange(next);
  }
}
