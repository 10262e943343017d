"""Language and embedding backends plus the map rendering pipeline.

Two interchangeable backends exist:

* ``StubBackend`` is pure and bit-deterministic: suggestions come from a
  one-step lookahead over the persona's private reward, reflections are
  template text, and embeddings use signed feature hashing (FNV-1a 64-bit
  over lowercased word tokens, L2-normalized).
* ``HttpBackend`` speaks the common chat-completions and embeddings JSON
  wire format against any compatible server, with bounded retries,
  exponential backoff jittered from the run RNG, and stub fallback whenever
  a call or parse ultimately fails. Every live request/response pair is
  mirrored to a JSONL transcript.

The grid is rendered to a 320x320 PNG (32 px cells) and shipped to the chat
API as a ``data:image/png;base64,...`` URL inside the message content.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from random import Random
from typing import Callable

import numpy as np
import requests
from PIL import Image, ImageDraw

from .behavior_loop import hint_sentence
from .grid_env import (
    DIRECTION_ORDER,
    Direction,
    EntityState,
    GridMap,
    StepEvent,
    TileKind,
    distance_to_goal,
    step,
)
from .personas import (
    DEFAULT_PARAMS,
    AgentState,
    PersonaKind,
    PersonaParams,
    RewardContext,
    private_reward,
)

logger = logging.getLogger(__name__)

DEFAULT_EMBED_DIM = 3077

CELL_PX = 32

_TILE_COLORS = {
    TileKind.SAFE: (220, 220, 220),
    TileKind.FOOD: (80, 180, 80),
    TileKind.TRAP: (200, 60, 60),
    TileKind.GOAL: (240, 200, 40),
}
_ENTITY_COLOR = (60, 90, 200)

_MOVE_RE = re.compile(r"\bMOVE\s+(Up|Down|Left|Right)\b\s*:?\s*(.*)", re.IGNORECASE | re.DOTALL)
_DIR_BY_LOWER = {d.value.lower(): d for d in Direction}
_TOKEN_RE = re.compile(r"[a-z0-9]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


class BackendSetupError(RuntimeError):
    """The http backend cannot start (missing base_url or API key env var)."""


class BackendCallError(RuntimeError):
    """A live call failed even after retries."""


@dataclass(frozen=True)
class BackendConfig:
    mode: str = "stub"
    base_url: str = ""
    meta_model: str = "gpt-4o"
    agent_model: str = "gpt-4o-mini"
    embed_model: str = "text-embedding-3-large"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 30.0
    max_retries: int = 2
    embed_dim: int = DEFAULT_EMBED_DIM
    max_in_flight: int = 5

    def __post_init__(self):
        if self.mode not in ("stub", "http"):
            raise ValueError(f"backend mode must be 'stub' or 'http', got {self.mode!r}")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be positive")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be nonnegative")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")


@dataclass(frozen=True)
class RenderedMap:
    png_bytes: bytes
    base64_payload: str

    @property
    def data_url(self) -> str:
        return f"data:image/png;base64,{self.base64_payload}"


@dataclass(frozen=True)
class ReflectionRecord:
    agent: PersonaKind
    step: int
    text: str
    embedding: np.ndarray  # unit L2 norm, shape (D,)
    reward_used: float


@dataclass(frozen=True)
class AgentContext:
    """Everything an advisor's suggestion call can see for one round."""

    kind: PersonaKind
    grid: GridMap
    entity: EntityState
    agent: AgentState
    q_hint: tuple[tuple[Direction, float], ...]
    style_tokens: tuple[str, ...]
    memory_bias: str
    rendered: RenderedMap | None = None


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Signed feature hashing of word tokens into ``dim`` buckets, unit-normalized."""
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        raise ValueError("cannot embed empty text")
    vec = np.zeros(dim, dtype=float)
    for tok in tokens:
        h = fnv1a64(tok.encode("utf-8"))
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        vec[h % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # Signs cancelled exactly; pin one bucket from the whole-text hash.
        vec[fnv1a64(text.encode("utf-8")) % dim] = 1.0
        norm = 1.0
    return vec / norm


def render_map(grid: GridMap, entity: EntityState) -> RenderedMap:
    """Render the world to PNG: 32 px cells, fixed tile colors, entity disc."""
    img = Image.new("RGB", (grid.width * CELL_PX, grid.height * CELL_PX))
    draw = ImageDraw.Draw(img)
    for y in range(grid.height):
        for x in range(grid.width):
            x0, y0 = x * CELL_PX, y * CELL_PX
            draw.rectangle(
                [x0, y0, x0 + CELL_PX - 1, y0 + CELL_PX - 1],
                fill=_TILE_COLORS[grid.tile_at(x, y)],
                outline=(160, 160, 160),
            )
    ex, ey = entity.position
    pad = 6
    draw.ellipse(
        [ex * CELL_PX + pad, ey * CELL_PX + pad, (ex + 1) * CELL_PX - pad, (ey + 1) * CELL_PX - pad],
        fill=_ENTITY_COLOR,
    )
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    png = buf.getvalue()
    return RenderedMap(png_bytes=png, base64_payload=base64.b64encode(png).decode("ascii"))


def _load_prompt(name: str) -> str:
    return resources.files("gridcouncil").joinpath(f"data/prompts/{name}").read_text("utf-8")


def persona_goals() -> dict[PersonaKind, str]:
    goals: dict[PersonaKind, str] = {}
    for line in _load_prompt("persona_goals.txt").splitlines():
        if not line.strip():
            continue
        name, _, goal = line.partition(":")
        goals[PersonaKind(name.strip())] = goal.strip()
    return goals


def build_agent_prompt(ctx: AgentContext) -> str:
    template = _load_prompt("agent_prompt.txt")
    return template.format(
        persona=ctx.kind.value,
        goal=persona_goals()[ctx.kind],
        position=f"({ctx.entity.position[0]}, {ctx.entity.position[1]})",
        stamina=ctx.entity.stamina,
        q_hint=hint_sentence(list(ctx.q_hint)),
        style="; ".join(ctx.style_tokens) if ctx.style_tokens else "(none)",
        memory_bias=ctx.memory_bias or "(no past episodes retrieved)",
    )


def build_meta_prompt(bundles, trust_scores: dict[PersonaKind, float], memory_bias: str) -> str:
    template = _load_prompt("meta_prompt.txt")
    trust_line = ", ".join(f"{k.value}={trust_scores[k]:.3f}" for k in trust_scores)
    bundle_lines = "\n".join(
        f"- {b.agent.value} proposes {b.proposed_action.value}: {b.persuasion_text}" for b in bundles
    )
    return template.format(
        trust=trust_line,
        memory_bias=memory_bias or "(no past episodes retrieved)",
        bundles=bundle_lines,
    )


def parse_move_line(text: str) -> tuple[Direction, str] | None:
    match = _MOVE_RE.search(text)
    if not match:
        return None
    direction = _DIR_BY_LOWER[match.group(1).lower()]
    return direction, match.group(2).strip()


class StubBackend:
    """Deterministic offline backend; pure functions of its inputs."""

    def __init__(self, config: BackendConfig, params: PersonaParams = DEFAULT_PARAMS):
        self.config = config
        self.params = params

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def embed(self, text: str) -> np.ndarray:
        return hash_embed(text, self.config.embed_dim)

    def _lookahead_reward(self, ctx: AgentContext, direction: Direction) -> float:
        probe = EntityState(
            position=ctx.entity.position,
            stamina=ctx.entity.stamina,
            career_delta=ctx.entity.career_delta,
            consumed_food=set(ctx.entity.consumed_food),
        )
        prev_d = distance_to_goal(ctx.grid, probe.position)
        outcome = step(ctx.grid, probe, direction)
        new_d = distance_to_goal(ctx.grid, probe.position)
        reward_ctx = RewardContext(
            outcome=outcome,
            adopted=False,
            prev_distance=prev_d,
            new_distance=new_d,
            action=direction,
            round_boundary=False,
        )
        return private_reward(ctx.agent, reward_ctx, self.params)

    def suggest(self, ctx: AgentContext) -> tuple[Direction, str]:
        """One-step lookahead maximizing this persona's private reward."""
        rewards = [(d, self._lookahead_reward(ctx, d)) for d in DIRECTION_ORDER]
        # Strict > keeps the earliest direction on exact ties.
        best_dir, best_r = rewards[0]
        for d, r in rewards[1:]:
            if r > best_r:
                best_dir, best_r = d, r
        style_lead = f" {ctx.style_tokens[0]}" if ctx.style_tokens else ""
        text = (
            f"{ctx.kind.value} advisor: move {best_dir.value}; expected private gain "
            f"{best_r:.2f}.{style_lead}"
        )
        return best_dir, text

    def reflect(
        self,
        kind: PersonaKind,
        step_index: int,
        action: Direction,
        events: frozenset[StepEvent],
        reward: float,
        adopted: bool,
    ) -> ReflectionRecord:
        event_text = ",".join(sorted(e.value for e in events)) or "none"
        if reward > 0:
            sign_word = "positive"
        elif reward < 0:
            sign_word = "negative"
        else:
            sign_word = "neutral"
        text = (
            f"{kind.value} reflects on moving {action.value}: events {event_text}; "
            f"the outcome felt {sign_word}; adopted {'yes' if adopted else 'no'}."
        )
        return ReflectionRecord(
            agent=kind,
            step=step_index,
            text=text,
            embedding=self.embed(text),
            reward_used=reward,
        )

    def meta_decide(self, prompt: str, rendered: RenderedMap | None, attempt: int) -> str | None:
        # The stub controller has no chat model; arbitration applies the trust rule.
        return None


class HttpBackend:
    """Client for chat-completions and embeddings endpoints, with stub fallback.

    ``jitter_rng`` must come from the run's seed splitter so backoff delays are
    reproducible; ``sleep`` is injectable for tests.
    """

    def __init__(
        self,
        config: BackendConfig,
        jitter_rng: Random,
        params: PersonaParams = DEFAULT_PARAMS,
        transcript_path=None,
        sleep: Callable[[float], None] = time.sleep,
        session: requests.Session | None = None,
    ):
        if not config.base_url:
            raise BackendSetupError("http backend requires backend.base_url")
        api_key = os.environ.get(config.api_key_env, "")
        if not api_key:
            raise BackendSetupError(
                f"http backend requires the API key env var {config.api_key_env!r} to be set"
            )
        self.config = config
        self._api_key = api_key
        self._stub = StubBackend(config, params)
        self._jitter = jitter_rng
        self._sleep = sleep
        self._session = session or requests.Session()
        self._transcript_path = transcript_path
        self._transcript_lock = threading.Lock()
        self._in_flight = threading.Semaphore(config.max_in_flight)

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def _record(self, kind: str, payload: dict, status: int, body) -> None:
        if self._transcript_path is None:
            return
        line = json.dumps(
            {"kind": kind, "request": payload, "status": status, "response": body},
            sort_keys=True,
        )
        with self._transcript_lock:
            with open(self._transcript_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def _post(self, kind: str, path: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        headers = {"Authorization": f"Bearer {self._api_key}"}
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                with self._in_flight:
                    resp = self._session.post(
                        url, json=payload, headers=headers, timeout=self.config.timeout
                    )
                body = None
                try:
                    body = resp.json()
                except ValueError:
                    pass
                self._record(kind, payload, resp.status_code, body)
                if resp.status_code == 200 and isinstance(body, dict):
                    return body
                last_error = BackendCallError(f"{path} returned status {resp.status_code}")
            except requests.RequestException as exc:
                last_error = exc
            if attempt < self.config.max_retries:
                delay = 0.5 * (2**attempt) * (1.0 + 0.1 * self._jitter.random())
                self._sleep(delay)
        raise BackendCallError(f"{path} failed after {self.config.max_retries + 1} attempts: {last_error}")

    def chat(self, model: str, prompt: str, rendered: RenderedMap | None) -> str:
        content: list[dict] = [{"type": "text", "text": prompt}]
        if rendered is not None:
            content.append({"type": "image_url", "image_url": {"url": rendered.data_url}})
        payload = {"model": model, "messages": [{"role": "user", "content": content}]}
        body = self._post("chat", "/chat/completions", payload)
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendCallError(f"chat response missing content: {exc}") from exc

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        try:
            body = self._post("embeddings", "/embeddings", {"model": self.config.embed_model, "input": text})
            values = np.asarray(body["data"][0]["embedding"], dtype=float)
        except (BackendCallError, KeyError, IndexError, TypeError, ValueError) as exc:
            logger.warning("embedding call failed (%s); using stub embedding", exc)
            return self._stub.embed(text)
        dim = self.config.embed_dim
        if values.shape[0] < dim:
            values = np.concatenate([values, np.zeros(dim - values.shape[0])])
        else:
            values = values[:dim]
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            logger.warning("embedding response was all zeros; using stub embedding")
            return self._stub.embed(text)
        return values / norm

    def suggest(self, ctx: AgentContext) -> tuple[Direction, str]:
        prompt = build_agent_prompt(ctx)
        for _ in range(2):  # initial ask plus one parse re-prompt
            try:
                reply = self.chat(self.config.agent_model, prompt, ctx.rendered)
            except BackendCallError as exc:
                logger.warning("%s suggestion call failed (%s); using stub", ctx.kind.value, exc)
                return self._stub.suggest(ctx)
            parsed = parse_move_line(reply)
            if parsed is not None:
                return parsed
        logger.warning("%s suggestion unparseable after re-prompt; using stub", ctx.kind.value)
        return self._stub.suggest(ctx)

    def reflect(
        self,
        kind: PersonaKind,
        step_index: int,
        action: Direction,
        events: frozenset[StepEvent],
        reward: float,
        adopted: bool,
    ) -> ReflectionRecord:
        stub_record = self._stub.reflect(kind, step_index, action, events, reward, adopted)
        prompt = (
            f"You are the {kind.value} advisor. You moved {action.value} "
            f"(events: {','.join(sorted(e.value for e in events)) or 'none'}; reward {reward:.3f}; "
            f"adopted: {'yes' if adopted else 'no'}). Reflect in one sentence on what to try next."
        )
        try:
            text = self.chat(self.config.agent_model, prompt, None).strip()
        except BackendCallError as exc:
            logger.warning("%s reflection call failed (%s); using stub", kind.value, exc)
            return stub_record
        if not text:
            return stub_record
        return ReflectionRecord(
            agent=kind,
            step=step_index,
            text=text,
            embedding=self.embed(text),
            reward_used=reward,
        )

    def meta_decide(self, prompt: str, rendered: RenderedMap | None, attempt: int) -> str | None:
        suffix = "" if attempt == 0 else "\nYour previous reply was malformed. Answer with the single required line only."
        try:
            return self.chat(self.config.meta_model, prompt + suffix, rendered)
        except BackendCallError as exc:
            logger.warning("meta decision call failed (%s); falling back", exc)
            return None


Backend = StubBackend | HttpBackend


def make_backend(
    config: BackendConfig,
    jitter_rng: Random,
    params: PersonaParams = DEFAULT_PARAMS,
    transcript_path=None,
) -> Backend:
    if config.mode == "stub":
        return StubBackend(config, params)
    return HttpBackend(config, jitter_rng, params, transcript_path=transcript_path)
