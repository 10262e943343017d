"""Trust-weighted arbitration over the five advisors, trust updates, adoption accounting.

In stub mode the controller adopts the most trusted advisor outright. In llm
mode a decider callable (the chat backend) is asked for a single line
``ADOPT <advisor> <direction>``; one re-prompt is allowed before falling back
to the stub rule.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from collections import deque
from dataclasses import dataclass, field
from statistics import fmean
from typing import Callable, Sequence

from .grid_env import Direction
from .personas import PERSONA_ORDER, PersonaKind

logger = logging.getLogger(__name__)

TRUST_WINDOW_DEFAULT = 10

# Column order of the adoption CSV trust snapshot.
_TRUST_COLUMNS = ["T_rational", "T_emotion", "T_risk", "T_habit", "T_social"]

_ADOPT_RE = re.compile(
    r"\bADOPT\s+(Rational|Emotion|RiskMonitor|Habitual|SocialCognition)\s+(Up|Down|Left|Right)\b",
    re.IGNORECASE,
)

_KIND_BY_LOWER = {kind.value.lower(): kind for kind in PERSONA_ORDER}
_DIR_BY_LOWER = {d.value.lower(): d for d in Direction}


@dataclass
class TrustScores:
    """Per-advisor credibility plus the rolling shared-reward baseline window."""

    beta: float = 0.1
    window_size: int = TRUST_WINDOW_DEFAULT
    scores: dict[PersonaKind, float] = field(
        default_factory=lambda: {kind: 1.0 for kind in PERSONA_ORDER}
    )
    window: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.window_size < 1:
            raise ValueError("window size must be at least 1")
        self.window = deque(self.window, maxlen=self.window_size)

    def baseline(self) -> float:
        return fmean(self.window) if self.window else 0.0

    def snapshot(self) -> dict[PersonaKind, float]:
        return dict(self.scores)


@dataclass(frozen=True)
class SuggestionBundle:
    agent: PersonaKind
    proposed_action: Direction
    persuasion_text: str
    style_tokens: tuple[str, ...]
    q_hint: tuple[tuple[Direction, float], ...]


@dataclass(frozen=True)
class ArbitrationResult:
    agent: PersonaKind
    action: Direction
    used_fallback: bool = False
    raw_response: str | None = None


def _stub_choice(
    bundles: Sequence[SuggestionBundle], trust: TrustScores
) -> tuple[PersonaKind, Direction]:
    by_agent = {b.agent: b for b in bundles}
    # max() keeps the first maximal element, so ties resolve in persona order.
    best = max(PERSONA_ORDER, key=lambda kind: trust.scores[kind])
    return best, by_agent[best].proposed_action


def parse_adoption_line(text: str) -> tuple[PersonaKind, Direction] | None:
    match = _ADOPT_RE.search(text)
    if not match:
        return None
    return _KIND_BY_LOWER[match.group(1).lower()], _DIR_BY_LOWER[match.group(2).lower()]


def arbitrate(
    bundles: Sequence[SuggestionBundle],
    trust: TrustScores,
    mode: str = "stub",
    decider: Callable[[int], str | None] | None = None,
) -> ArbitrationResult:
    """Pick the advisor (and direction) whose suggestion the controller executes."""
    if len(bundles) != len(PERSONA_ORDER):
        raise ValueError(f"expected {len(PERSONA_ORDER)} bundles, got {len(bundles)}")
    if {b.agent for b in bundles} != set(PERSONA_ORDER):
        raise ValueError("expected exactly one bundle per persona")
    if mode == "stub":
        agent, action = _stub_choice(bundles, trust)
        return ArbitrationResult(agent=agent, action=action)
    if mode != "llm":
        raise ValueError(f"unknown arbitration mode {mode!r}")
    if decider is None:
        raise ValueError("llm mode requires a decider callable")
    last_response: str | None = None
    for attempt in range(2):  # initial ask plus one re-prompt
        response = decider(attempt)
        last_response = response
        if response is not None:
            parsed = parse_adoption_line(response)
            if parsed is not None:
                return ArbitrationResult(agent=parsed[0], action=parsed[1], raw_response=response)
    logger.warning("arbitration response unusable after re-prompt; falling back to trust argmax")
    agent, action = _stub_choice(bundles, trust)
    return ArbitrationResult(agent=agent, action=action, used_fallback=True, raw_response=last_response)


def trust_update(trust: TrustScores, adopted: PersonaKind, r_s: float) -> TrustScores:
    """Credit the adopted advisor with the shared-reward advantage over the window mean."""
    if not math.isfinite(r_s):
        raise ValueError(f"shared reward must be finite, got {r_s}")
    trust.scores[adopted] += trust.beta * (r_s - trust.baseline())
    trust.window.append(r_s)
    return trust


def social_trust_boost(
    trust: TrustScores, career_delta_change: float, rate: float = 0.2
) -> TrustScores:
    """Career gains raise SocialCognition's trust; losses never lower it here."""
    if not math.isfinite(career_delta_change):
        raise ValueError("career change must be finite")
    trust.scores[PersonaKind.SOCIAL_COGNITION] += rate * max(0.0, career_delta_change)
    return trust


@dataclass(frozen=True)
class AdoptionRecord:
    step: int
    episode: int
    agent: PersonaKind
    action: Direction
    trust: dict[PersonaKind, float]
    shared_reward: float


@dataclass
class AdoptionLog:
    records: list[AdoptionRecord] = field(default_factory=list)

    def append(self, record: AdoptionRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def counts(self) -> dict[PersonaKind, int]:
        out = {kind: 0 for kind in PERSONA_ORDER}
        for rec in self.records:
            out[rec.agent] += 1
        return out


def export_adoption_csv(log: AdoptionLog, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "episode", "adopted_agent", "action", *_TRUST_COLUMNS, "shared_reward"])
        for rec in log.records:
            writer.writerow(
                [
                    rec.step,
                    rec.episode,
                    rec.agent.value,
                    rec.action.value,
                    *[repr(rec.trust[kind]) for kind in PERSONA_ORDER],
                    repr(rec.shared_reward),
                ]
            )
