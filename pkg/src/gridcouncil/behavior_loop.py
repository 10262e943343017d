"""Per-agent tabular Q-learning, composite rewards, and soft suggestion hints.

Q-values are never used to pick actions directly; the top entries are surfaced
as a hint sentence inside each advisor's prompt.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .grid_env import DIRECTION_ORDER, Direction
from .personas import PERSONA_ORDER, PersonaKind, persona_index

StateKey = tuple[int, int]

# Per-agent key offset; larger than the grid, so agent key ranges never overlap.
AGENT_KEY_OFFSET = 100


def state_key(position: tuple[int, int], agent_index: int) -> StateKey:
    """Offset shared coordinates so each agent converges on its own key range."""
    off = AGENT_KEY_OFFSET * agent_index
    return (position[0] + off, position[1] + off)


@dataclass
class QTable:
    """Sparse tabular Q-function; missing entries read as 0.0."""

    alpha: float = 0.1
    gamma: float = 0.9
    agent_offset: int = 0
    entries: dict[tuple[StateKey, Direction], float] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")

    def value(self, s: StateKey, a: Direction) -> float:
        return self.entries.get((s, a), 0.0)

    def max_value(self, s: StateKey) -> float:
        return max(self.value(s, a) for a in DIRECTION_ORDER)


def q_update(q: QTable, s: StateKey, a: Direction, r: float, s_next: StateKey) -> QTable:
    """One temporal-difference backup; touches exactly the (s, a) entry."""
    if not math.isfinite(r):
        raise ValueError(f"reward must be finite, got {r}")
    current = q.value(s, a)
    target = r + q.gamma * q.max_value(s_next)
    q.entries[(s, a)] = current + q.alpha * (target - current)
    return q


def composite_reward(r_p: float, r_s: float, w_p: float, w_s: float) -> float:
    """Weighted blend of an agent's private reward and the shared task reward."""
    for name, v in (("r_p", r_p), ("r_s", r_s), ("w_p", w_p), ("w_s", w_s)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v}")
    return w_p * r_p + w_s * r_s


def soft_suggestions(q: QTable, s: StateKey, k: int) -> list[tuple[Direction, float]]:
    """Top-k actions by Q-value, ties broken by the fixed direction order.

    Prompt-only output: arbitration never reads these values when deciding.
    """
    if not (1 <= k <= len(DIRECTION_ORDER)):
        raise ValueError(f"k must lie in [1, {len(DIRECTION_ORDER)}], got {k}")
    ranked = sorted(
        ((a, q.value(s, a)) for a in DIRECTION_ORDER),
        key=lambda pair: (-pair[1], DIRECTION_ORDER.index(pair[0])),
    )
    return ranked[:k]


def hint_sentence(suggestions: list[tuple[Direction, float]]) -> str:
    """Render Q hints as the prompt's weak-guidance sentence."""
    parts = ", ".join(f"{a.value} ({v:.3f})" for a, v in suggestions)
    return f"Hint: the following actions may be helpful: {parts}."


def export_qtables_csv(tables: dict[PersonaKind, QTable], path) -> None:
    """Flat snapshot ``agent,state_x,state_y,action,q`` with de-offset coordinates."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "state_x", "state_y", "action", "q"])
        for kind in PERSONA_ORDER:
            table = tables.get(kind)
            if table is None:
                continue
            off = AGENT_KEY_OFFSET * persona_index(kind)
            rows = sorted(
                table.entries.items(),
                key=lambda item: (item[0][0][1], item[0][0][0], DIRECTION_ORDER.index(item[0][1])),
            )
            for (skey, action), value in rows:
                writer.writerow([kind.value, skey[0] - off, skey[1] - off, action.value, repr(value)])
