"""HTTP inference service: live chat sessions over the trained bundle.

Sessions are in-memory; each session owns a turn lock so concurrent requests
to the same session are serialized while different sessions proceed in
parallel.  Optional transcript persistence appends finished conversations in
the corpus line format.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import __version__
from .corpus import (
    Conversation,
    CSLabel,
    EmotionLabel,
    Role,
    StrategyLabel,
    Utterance,
    serialize_utterance,
)
from .generation import GenerationParams, sample_response
from .model import ModelBundle
from .training import _utterance_ids


class SessionNotFound(Exception):
    pass


class GenerationError(Exception):
    pass


LABEL_DESCRIPTIONS = {
    "cs": {
        "None": "Neutral small talk with no targeted stimulation.",
        "Inquiry": "Asks the elder a question to prompt recall or sharing.",
        "Respect": "Polite, courteous phrasing directed at the elder.",
        "Reminiscence": "Invites memories of earlier life and personal history.",
        "Expression": "Encourages the elder to put thoughts into words.",
        "Enjoyment": "Brings fun or shared pleasure into the conversation.",
        "Comfort": "Reassures and soothes the elder.",
    },
    "emotion": {
        "None": "No marked emotion.",
        "Disgust": "Aversion or distaste.",
        "Sadness": "Low mood, sorrow.",
        "Fear": "Worry or fright.",
        "Surprise": "Unexpectedness.",
        "Like": "Fondness or approval.",
        "Happiness": "Joy or contentment.",
        "Anger": "Irritation or rage.",
    },
    "strategy": {
        "None": "No explicit support strategy.",
        "Question": "Asks for details to understand the situation.",
        "Reflection of feelings": "Mirrors the speaker's emotional state.",
        "Self-disclosure": "Shares a comparable personal experience.",
        "Providing suggestions": "Offers concrete advice.",
        "Information": "Supplies factual information.",
        "Others": "Any other supportive move.",
    },
}


@dataclass
class ChatSession:
    session_id: str
    history: list[Utterance] = field(default_factory=list)
    params: GenerationParams = field(default_factory=GenerationParams)
    created_at: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock)


class ParamsBody(BaseModel):
    temperature: float | None = Field(default=None, gt=0)
    top_k: int | None = Field(default=None, ge=0)
    top_p: float | None = Field(default=None, gt=0, le=1)
    max_new_tokens: int | None = Field(default=None, ge=1)
    seed: int | None = None


class ChatBody(BaseModel):
    session_id: str = Field(min_length=1, max_length=128)
    message: str = Field(min_length=1)
    params: ParamsBody | None = None


class SessionStore:
    def __init__(self):
        self._sessions: dict[str, ChatSession] = {}
        self._lock = threading.Lock()

    def get_or_create(self, session_id: str, params: GenerationParams) -> ChatSession:
        with self._lock:
            if session_id not in self._sessions:
                self._sessions[session_id] = ChatSession(
                    session_id=session_id, params=params
                )
            return self._sessions[session_id]

    def pop(self, session_id: str) -> ChatSession:
        with self._lock:
            if session_id not in self._sessions:
                raise SessionNotFound(session_id)
            return self._sessions.pop(session_id)

    def values(self):
        with self._lock:
            return list(self._sessions.values())


def _classify_utterance(bundle: ModelBundle, text: str):
    import torch

    probe = Utterance(
        role=Role.SPEAKER, text=text,
        cs=CSLabel.NONE, emo=EmotionLabel.NONE, strategy=StrategyLabel.NONE,
    )
    ids = torch.tensor([_utterance_ids(probe, bundle.vocab)], dtype=torch.long)
    out = {}
    for taxonomy in ("cs", "emotion", "strategy"):
        label, _, _ = bundle.classifiers[taxonomy].classify(ids)
        out[taxonomy] = label
    return out


def respond(session: ChatSession, user_message: str, bundle: ModelBundle,
            seed: int) -> dict:
    """Append the user turn, generate, append the model turn.

    The returned labels are the classifier outputs for the user message,
    i.e. the labels that conditioned this generation.
    """
    user_message = user_message.strip()
    if not user_message:
        raise GenerationError("empty message")
    t0 = time.monotonic()
    with session.lock:
        user_labels = _classify_utterance(bundle, user_message)
        session.history.append(
            Utterance(
                role=Role.SPEAKER, text=user_message,
                cs=user_labels["cs"], emo=user_labels["emotion"],
                strategy=user_labels["strategy"],
            )
        )
        params = GenerationParams(
            temperature=session.params.temperature,
            top_k=session.params.top_k,
            top_p=session.params.top_p,
            max_new_tokens=session.params.max_new_tokens,
            seed=seed,
        )
        text, triple = sample_response(session.history, bundle, params)
        if not text:
            text = "嗯。"  # degenerate sample; keep the transcript valid
        reply_labels = _classify_utterance(bundle, text)
        session.history.append(
            Utterance(
                role=Role.LISTENER, text=text,
                cs=reply_labels["cs"], emo=reply_labels["emotion"],
                strategy=reply_labels["strategy"],
            )
        )
    emo, cs, strategy = triple
    return {
        "session_id": session.session_id,
        "response_text": text,
        "cs": str(cs),
        "emo": str(emo),
        "strategy": str(strategy),
        "latency_ms": int((time.monotonic() - t0) * 1000),
        "seed": seed,
    }


def create_app(
    bundle: ModelBundle,
    default_params: GenerationParams | None = None,
    transcript_dir: str | None = None,
    static_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="cs-dialogue service")
    store = SessionStore()
    app.state.sessions = store
    params = default_params or GenerationParams()
    counter = {"value": 0}
    counter_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"error": "invalid request", "detail": exc.errors()},
        )

    @app.exception_handler(Exception)
    async def error_handler(request: Request, exc: Exception):
        return JSONResponse(
            status_code=500, content={"error": type(exc).__name__, "detail": str(exc)}
        )

    @app.get("/api/health")
    def health():
        return {
            "status": "ok",
            "model_version": bundle.metadata.get("version", __version__),
        }

    @app.get("/api/labels")
    def labels():
        taxonomies = {
            "cs": [l.value for l in CSLabel],
            "emotion": [l.value for l in EmotionLabel],
            "strategy": [l.value for l in StrategyLabel],
        }
        return {
            taxonomy: [
                {"name": name, "description": LABEL_DESCRIPTIONS[taxonomy][name]}
                for name in names
            ]
            for taxonomy, names in taxonomies.items()
        }

    @app.post("/api/chat")
    def chat(body: ChatBody):
        session = store.get_or_create(body.session_id, params)
        if body.params is not None:
            overrides = {
                k: v for k, v in body.params.model_dump().items() if v is not None
            }
            seed_override = overrides.pop("seed", None)
            base = session.params
            session.params = GenerationParams(
                temperature=overrides.get("temperature", base.temperature),
                top_k=overrides.get("top_k", base.top_k),
                top_p=overrides.get("top_p", base.top_p),
                max_new_tokens=overrides.get("max_new_tokens", base.max_new_tokens),
            )
        else:
            seed_override = None
        if seed_override is None:
            with counter_lock:
                counter["value"] += 1
                seed = counter["value"]
        else:
            seed = seed_override
        try:
            return respond(session, body.message, bundle, seed)
        except GenerationError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.delete("/api/session/{session_id}")
    def delete_session(session_id: str):
        try:
            session = store.pop(session_id)
        except SessionNotFound:
            return JSONResponse(
                status_code=404, content={"error": "session not found"}
            )
        _persist(session)
        return {"deleted": session_id, "turns": len(session.history)}

    def _persist(session: ChatSession):
        if transcript_dir is None or len(session.history) < 2:
            return
        path = Path(transcript_dir)
        path.mkdir(parents=True, exist_ok=True)
        conv = Conversation(tuple(session.history))
        block = "\n".join(serialize_utterance(u) for u in conv.utterances)
        with open(path / f"{session.session_id}.csconv", "a", encoding="utf-8") as fh:
            fh.write(block + "\n\n")

    @app.on_event("shutdown")
    def flush_sessions():
        for session in store.values():
            _persist(session)

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def new_session_id() -> str:
    return uuid.uuid4().hex
