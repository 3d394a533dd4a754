"""Capture-session service: a 4-attempt feedback loop per session with a
best-image fallback, content-addressed image storage, an append-only JSONL
event log, and an HTTP façade.

The core `CaptureService` is transport-agnostic (the HTTP app is a thin
wrapper), takes an injectable clock and assessor for testing, and serializes
operations per session so concurrent submissions cannot race.
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, File, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import canonjson, ensemble, pipeline
from .errors import (ImageError, PhotoqcError, ServiceNotReady, SessionNotFound,
                     SessionTerminal)
from .imagekit import decode_image

DEFAULT_ATTEMPT_CAP = 4
EVENTS = ("session_created", "attempt_submitted", "verdict_returned",
          "session_finalized")


@dataclass
class AttemptRecord:
    attempt_number: int  # 1-based, strictly sequential
    image_ref: str
    verdict: ensemble.Verdict
    received_at: float


@dataclass
class CaptureSession:
    session_id: str
    created_at: float
    updated_at: float
    state: str = "active"  # active | accepted | exhausted
    attempts: list = field(default_factory=list)
    final_attempt_index: int | None = None


def _default_config() -> dict:
    return {"host": "127.0.0.1", "port": 8787, "model_path": None,
            "storage_dir": "captures", "log_path": "events.jsonl",
            "attempt_cap": DEFAULT_ATTEMPT_CAP, "fpr_cap": None}


def load_config(path) -> dict:
    """Service config from TOML or JSON; unknown keys are rejected."""
    config = _default_config()
    if path is None:
        return config
    text = open(path, "rb").read()
    if str(path).endswith(".json"):
        loaded = json.loads(text.decode("utf-8"))
    else:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        loaded = tomllib.loads(text.decode("utf-8"))
    unknown = set(loaded) - set(config)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    config.update(loaded)
    return config


class CaptureService:
    """Session registry + state machine around a loaded QualityModel."""

    def __init__(self, model: ensemble.QualityModel | None, storage_dir, log_path,
                 attempt_cap: int = DEFAULT_ATTEMPT_CAP, clock=None, assessor=None):
        self._model = model
        self._storage_dir = str(storage_dir)
        self._log_path = str(log_path)
        self._attempt_cap = attempt_cap
        self._clock = clock or __import__("time").time
        self._assessor = assessor
        self._sessions: dict[str, CaptureSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self._log_lock = threading.Lock()
        os.makedirs(self._storage_dir, exist_ok=True)
        os.makedirs(os.path.dirname(os.path.abspath(self._log_path)), exist_ok=True)

    # -- infrastructure ----------------------------------------------------

    @property
    def model_version(self) -> str:
        self._require_ready()
        return f"{self._model.artifact_version}:{self._model.created_at}"

    @property
    def attempt_cap(self) -> int:
        return self._attempt_cap

    def _require_ready(self) -> None:
        if self._model is None and self._assessor is None:
            raise ServiceNotReady("no quality model is loaded")

    def _log(self, session_id: str, event: str, payload: dict) -> None:
        entry = {"timestamp": self._clock(), "session_id": session_id,
                 "event": event, "payload": payload}
        with self._log_lock:
            with open(self._log_path, "a", encoding="utf-8") as fh:
                fh.write(canonjson.dumps(entry))
                fh.write("\n")

    def _store_image(self, data: bytes) -> str:
        ref = hashlib.sha256(data).hexdigest()
        path = os.path.join(self._storage_dir, ref)
        if not os.path.exists(path):
            tmp = path + ".tmp"
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        return ref

    def _assess(self, data: bytes) -> ensemble.Verdict:
        if self._assessor is not None:
            return self._assessor(data)
        return ensemble.assess(decode_image(data), self._model)

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            if session_id not in self._sessions:
                raise SessionNotFound(f"unknown session {session_id}")
            return self._locks[session_id]

    # -- operations ----------------------------------------------------------

    def create_session(self) -> str:
        self._require_ready()
        session_id = secrets.token_urlsafe(16)
        now = self._clock()
        with self._registry_lock:
            self._sessions[session_id] = CaptureSession(
                session_id=session_id, created_at=now, updated_at=now)
            self._locks[session_id] = threading.Lock()
        self._log(session_id, "session_created", {})
        return session_id

    def submit_attempt(self, session_id: str, image_bytes: bytes) -> dict:
        self._require_ready()
        lock = self._lock_for(session_id)
        with lock:
            session = self._sessions[session_id]
            if session.state != "active":
                raise SessionTerminal(f"session is {session.state}")
            # decode/assess failures propagate before any attempt is recorded
            verdict = self._assess(image_bytes)
            image_ref = self._store_image(image_bytes)
            now = self._clock()
            attempt = AttemptRecord(attempt_number=len(session.attempts) + 1,
                                    image_ref=image_ref, verdict=verdict,
                                    received_at=now)
            session.attempts.append(attempt)
            session.updated_at = now
            self._log(session_id, "attempt_submitted",
                      {"attempt_number": attempt.attempt_number,
                       "image_ref": image_ref})
            self._log(session_id, "verdict_returned",
                      {"attempt_number": attempt.attempt_number,
                       "verdict": verdict.to_dict()})
            if not verdict.is_poor:
                session.state = "accepted"
                session.final_attempt_index = attempt.attempt_number - 1
            elif attempt.attempt_number >= self._attempt_cap:
                session.state = "exhausted"
                scores = [a.verdict.overall_score for a in session.attempts]
                session.final_attempt_index = min(range(len(scores)),
                                                  key=lambda i: (scores[i], i))
            if session.state != "active":
                self._log(session_id, "session_finalized",
                          {"state": session.state,
                           "final_attempt_index": session.final_attempt_index})
            return {"attempt_number": attempt.attempt_number,
                    "accepted": not verdict.is_poor,
                    "reasons": list(verdict.reasons),
                    "remaining_attempts": self._attempt_cap - attempt.attempt_number,
                    "session_state": session.state}

    def get_session(self, session_id: str) -> dict:
        lock = self._lock_for(session_id)
        with lock:
            session = self._sessions[session_id]
            attempts = [{"attempt_number": a.attempt_number,
                         "image_ref": a.image_ref,
                         "received_at": a.received_at,
                         "verdict": a.verdict.to_dict()}
                        for a in session.attempts]
            extra_time = 0.0
            if len(session.attempts) > 1:
                extra_time = (session.attempts[-1].received_at
                              - session.attempts[0].received_at)
            return {"session_id": session.session_id, "state": session.state,
                    "created_at": session.created_at,
                    "updated_at": session.updated_at,
                    "attempts": attempts,
                    "final_attempt_index": session.final_attempt_index,
                    "remaining_attempts": self._attempt_cap - len(session.attempts)
                    if session.state == "active" else 0,
                    "attempt_cap": self._attempt_cap,
                    "extra_time": extra_time}

    def export_log(self, path) -> None:
        with self._log_lock:
            data = b""
            if os.path.exists(self._log_path):
                with open(self._log_path, "rb") as fh:
                    data = fh.read()
        with open(path, "wb") as fh:
            fh.write(data)

    @property
    def log_path(self) -> str:
        return self._log_path


def service_from_config(config: dict, model=None, clock=None, assessor=None) -> CaptureService:
    if model is None and config.get("model_path"):
        model = ensemble.load_model(config["model_path"])
        if config.get("fpr_cap") is not None:
            model = pipeline.recalibrate_thresholds(model, float(config["fpr_cap"]))
    return CaptureService(model=model, storage_dir=config["storage_dir"],
                          log_path=config["log_path"],
                          attempt_cap=int(config["attempt_cap"]),
                          clock=clock, assessor=assessor)


# --------------------------------------------------------------------------
# HTTP layer
# --------------------------------------------------------------------------

_HTTP_STATUS = {"SessionNotFound": 404, "SessionTerminal": 409,
                "ImageDecodeError": 422, "ServiceNotReady": 503}


def _error_code(exc: PhotoqcError) -> str:
    if isinstance(exc, ImageError):
        return "ImageDecodeError"
    return type(exc).__name__


def create_app(service: CaptureService):
    """FastAPI application exposing the capture protocol."""
    app = FastAPI(title="photo quality capture service")

    def error_response(exc: PhotoqcError) -> JSONResponse:
        code = _error_code(exc)
        status = _HTTP_STATUS.get(code, 500)
        return JSONResponse(status_code=status,
                            content={"error": code, "message": str(exc)})

    @app.exception_handler(PhotoqcError)
    async def handle_domain_error(_req: Request, exc: PhotoqcError):
        return error_response(exc)

    @app.exception_handler(RequestValidationError)
    async def handle_validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"error": "ImageDecodeError",
                                     "message": str(exc.errors())})

    @app.post("/v1/sessions", status_code=201)
    def create_session():
        return {"session_id": service.create_session()}

    @app.post("/v1/sessions/{session_id}/attempts")
    def submit_attempt(session_id: str, image: UploadFile = File(...)):
        return service.submit_attempt(session_id, image.file.read())

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        return service.get_session(session_id)

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok", "model_version": service.model_version}

    return app


def run_server(config: dict, model=None) -> None:
    import uvicorn

    service = service_from_config(config, model=model)
    app = create_app(service)
    uvicorn.run(app, host=config["host"], port=int(config["port"]), log_level="warning")
