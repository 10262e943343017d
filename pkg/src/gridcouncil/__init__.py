"""gridcouncil: a deterministic multi-advisor gridworld simulator.

Five persona agents (Rational, Emotion, RiskMonitor, Habitual,
SocialCognition) advise a trust-weighted controller steering an entity across
a 10x10 tile grid. Each agent learns along two channels at once: a tabular
Q-table over movement (surfaced only as prompt hints) and an external latent
strategy vector nudged by reflection embeddings after every round. A
cross-episode memory pool feeds retrieved episode summaries back into the
prompts. Language-model calls go through a pluggable backend; the default
stub is fully offline and bit-deterministic.
"""

from .behavior_loop import QTable, composite_reward, q_update, soft_suggestions, state_key
from .config import ConfigError, RunConfig, load_config, parse_config_text
from .grid_env import (
    Direction,
    EntityState,
    GridMap,
    StepEvent,
    TileKind,
    TransitionOutcome,
    generate_map,
    load_map,
    serialize_state,
    stamina_from_mood,
    step,
)
from .language_loop import (
    LatentTrajectory,
    LatentVector,
    StyleCodebook,
    cosine,
    latent_update,
    style_decode,
)
from .lm_backend import (
    AgentContext,
    BackendConfig,
    HttpBackend,
    ReflectionRecord,
    RenderedMap,
    StubBackend,
    hash_embed,
    render_map,
)
from .memory_pool import EpisodicEntry, MemoryPool, bias_text, episodic_vector, retrieve
from .meta_controller import (
    AdoptionLog,
    SuggestionBundle,
    TrustScores,
    arbitrate,
    social_trust_boost,
    trust_update,
)
from .personas import (
    AgentState,
    PersonaKind,
    PersonaParams,
    RewardContext,
    make_agents,
    private_reward,
    update_mood,
)
from .simulation import RunArtifacts, analyze, replay, run_simulation

__version__ = "0.1.0"

__all__ = [
    "AdoptionLog",
    "AgentContext",
    "AgentState",
    "BackendConfig",
    "ConfigError",
    "Direction",
    "EntityState",
    "EpisodicEntry",
    "GridMap",
    "HttpBackend",
    "LatentTrajectory",
    "LatentVector",
    "MemoryPool",
    "PersonaKind",
    "PersonaParams",
    "QTable",
    "ReflectionRecord",
    "RenderedMap",
    "RewardContext",
    "RunArtifacts",
    "RunConfig",
    "StepEvent",
    "StubBackend",
    "StyleCodebook",
    "SuggestionBundle",
    "TileKind",
    "TransitionOutcome",
    "TrustScores",
    "analyze",
    "arbitrate",
    "bias_text",
    "composite_reward",
    "cosine",
    "episodic_vector",
    "generate_map",
    "hash_embed",
    "latent_update",
    "load_config",
    "load_map",
    "make_agents",
    "parse_config_text",
    "private_reward",
    "q_update",
    "render_map",
    "replay",
    "retrieve",
    "run_simulation",
    "serialize_state",
    "social_trust_boost",
    "soft_suggestions",
    "stamina_from_mood",
    "state_key",
    "step",
    "style_decode",
    "trust_update",
    "update_mood",
]
