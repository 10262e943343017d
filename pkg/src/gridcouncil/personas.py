"""The five advisor personas: identities, private state, private reward shaping.

Each persona scores a single environment transition through its own lens:

* Rational   - pays for Euclidean progress toward the goal.
* Emotion    - food, adoption and traps move its mood; the reward IS the mood delta.
* Habitual   - a small bonus for repeating the previously executed action.
* RiskMonitor - a large penalty on traps, a trickle for every trap-free move.
* SocialCognition - tracks the career ledger (goal completions, trap stumbles).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .grid_env import Direction, StepEvent, TransitionOutcome


class PersonaKind(Enum):
    RATIONAL = "Rational"
    EMOTION = "Emotion"
    RISK_MONITOR = "RiskMonitor"
    HABITUAL = "Habitual"
    SOCIAL_COGNITION = "SocialCognition"


# Canonical persona order: arbitration tie-breaks, Q-key offsets, CSV columns.
PERSONA_ORDER: tuple[PersonaKind, ...] = (
    PersonaKind.RATIONAL,
    PersonaKind.EMOTION,
    PersonaKind.RISK_MONITOR,
    PersonaKind.HABITUAL,
    PersonaKind.SOCIAL_COGNITION,
)


def persona_index(kind: PersonaKind) -> int:
    return PERSONA_ORDER.index(kind)


@dataclass
class PersonaParams:
    """Reward magnitudes and weights; every field is overridable via run config."""

    food_reward: float = 0.5
    adoption_bonus: float = 0.3
    trap_penalty: float = -1.0
    round_decay: float = -0.05
    habit_bonus: float = 0.2
    risk_step_reward: float = 0.05
    risk_trap_penalty: float = -1.0
    distance_coefficient: float = 1.0
    career_goal_delta: float = 0.5
    career_trap_delta: float = -0.3
    social_boost_rate: float = 0.2
    private_weight: float = 0.7
    shared_weight: float = 0.3
    mood_pin: float | None = None  # force a constant mood (experiment hook)


DEFAULT_PARAMS = PersonaParams()

MOOD_MIN = 0.0
MOOD_MAX = 2.0
MOOD_INITIAL = 1.0


@dataclass
class AgentState:
    """Per-persona private state.

    ``mood`` is meaningful only for Emotion and ``career_value`` only for
    SocialCognition; both stay at their initial values for the other kinds.
    ``last_action`` is the direction the controller executed last round.
    """

    kind: PersonaKind
    mood: float = MOOD_INITIAL
    career_value: float = 0.0
    last_action: Direction | None = None
    private_weight: float = 0.7
    shared_weight: float = 0.3


def make_agents(params: PersonaParams = DEFAULT_PARAMS) -> dict[PersonaKind, AgentState]:
    """One agent per persona; Emotion never sees the shared reward (w_s = 0)."""
    agents: dict[PersonaKind, AgentState] = {}
    for kind in PERSONA_ORDER:
        shared = 0.0 if kind is PersonaKind.EMOTION else params.shared_weight
        agents[kind] = AgentState(
            kind=kind,
            private_weight=params.private_weight,
            shared_weight=shared,
        )
    if params.mood_pin is not None:
        agents[PersonaKind.EMOTION].mood = params.mood_pin
    return agents


@dataclass(frozen=True)
class RewardContext:
    """Everything a persona needs to score one environment transition."""

    outcome: TransitionOutcome
    adopted: bool
    prev_distance: float
    new_distance: float
    action: Direction
    round_boundary: bool

    def __post_init__(self):
        if self.prev_distance < 0 or self.new_distance < 0:
            raise ValueError("distances must be nonnegative")


def private_reward(
    state: AgentState,
    ctx: RewardContext,
    params: PersonaParams = DEFAULT_PARAMS,
) -> float:
    events = ctx.outcome.events
    kind = state.kind
    if kind is PersonaKind.EMOTION:
        r = 0.0
        if StepEvent.ATE_FOOD in events:
            r += params.food_reward
        if ctx.adopted:
            r += params.adoption_bonus
        if StepEvent.HIT_TRAP in events:
            r += params.trap_penalty
        if ctx.round_boundary:
            r += params.round_decay
        return r
    if kind is PersonaKind.RATIONAL:
        return params.distance_coefficient * (ctx.prev_distance - ctx.new_distance)
    if kind is PersonaKind.HABITUAL:
        if state.last_action is not None and ctx.action == state.last_action:
            return params.habit_bonus
        return 0.0
    if kind is PersonaKind.RISK_MONITOR:
        if StepEvent.HIT_TRAP in events:
            return params.risk_trap_penalty
        return params.risk_step_reward
    if kind is PersonaKind.SOCIAL_COGNITION:
        r = 0.0
        if StepEvent.REACHED_GOAL in events:
            r += params.career_goal_delta
        if StepEvent.HIT_TRAP in events:
            r += params.career_trap_delta
        return r
    raise ValueError(f"unknown persona kind {kind!r}")


def update_mood(state: AgentState, delta: float) -> float:
    """Shift the Emotion agent's mood by ``delta``, clamped to [0, 2]."""
    if state.kind is not PersonaKind.EMOTION:
        raise ValueError(f"mood updates only apply to the Emotion agent, not {state.kind.value}")
    state.mood = min(MOOD_MAX, max(MOOD_MIN, state.mood + delta))
    return state.mood
