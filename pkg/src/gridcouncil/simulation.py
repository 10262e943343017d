"""Round-by-round simulation wiring every subsystem together, plus replay.

An episode resets the entity to the start cell; Q-tables, latent vectors,
trust scores, the memory pool, moods and careers all persist across episodes.
Within an episode each decision step (a "round") runs:

1. stamina for the round comes from the Emotion agent's current mood;
2. the map is rendered and the five advisors produce suggestion bundles
   (Q-value hints, decoded style tokens, memory bias are all in context);
3. the controller arbitrates and the entity executes the adopted direction
   once per stamina point, stopping early at the goal;
4. per-agent private rewards accumulate over those micro-moves (the adoption
   bonus and round decay attach to the final move); mood, career, Q-tables,
   reflections, latent vectors and trust update in fixed persona order; one
   StepRecord lands in the log.

Everything derives from the root seed through named RNG streams, so a stub
run writes byte-identical artifacts every time.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis
from .behavior_loop import (
    QTable,
    composite_reward,
    export_qtables_csv,
    q_update,
    soft_suggestions,
    state_key,
)
from .config import RunConfig, format_config, parse_config_text
from .grid_env import (
    Direction,
    EntityState,
    GridMap,
    StepEvent,
    distance_to_goal,
    format_map,
    generate_map,
    load_map,
    serialize_state,
    stamina_from_mood,
    step,
    update_career,
)
from .language_loop import (
    LatentTrajectory,
    StyleCodebook,
    default_phrases,
    export_trajectory_binary,
    export_trajectory_csv,
    init_latent,
    latent_update,
    load_trajectory_binary,
    style_decode,
)
from .lm_backend import AgentContext, build_meta_prompt, make_backend, render_map
from .memory_pool import (
    EpisodicEntry,
    MemoryPool,
    bias_text,
    episodic_vector,
    retrieve,
    save_pool,
)
from .meta_controller import (
    AdoptionLog,
    AdoptionRecord,
    SuggestionBundle,
    TrustScores,
    arbitrate,
    social_trust_boost,
    trust_update,
)
from .personas import (
    PERSONA_ORDER,
    PersonaKind,
    RewardContext,
    make_agents,
    persona_index,
    private_reward,
    update_mood,
)
from .rng import SeedSplitter, child_seed

logger = logging.getLogger(__name__)

QHINT_K = 2
STYLE_K = 3

STEPS_FILE = "steps.jsonl"
REFLECTIONS_FILE = "reflections.jsonl"
CONFIG_FILE = "config_resolved.txt"
MAP_FILE = "map.txt"
MAP_IMAGE_FILE = "map.png"
ADOPTION_FILE = "adoption.csv"
QTABLE_FILE = "qtable.csv"
POOL_INDEX_FILE = "memory_pool.jsonl"
POOL_VECTOR_FILE = "memory_pool.vec"
TRANSCRIPT_FILE = "llm_transcript.jsonl"


class ContractViolation(RuntimeError):
    """A module contract failed mid-run; the message names the failing step."""


class ReplayError(RuntimeError):
    """An artifact directory is missing or corrupt; names the first bad record."""


@dataclass
class RunArtifacts:
    directory: Path
    report: dict
    episodes: int
    decision_steps: int
    goals_reached: int


def _resolve_map(config: RunConfig, splitter: SeedSplitter) -> GridMap:
    src = config.map_source
    if src.file:
        return load_map(src.file)
    return generate_map(
        splitter.stream("map"),
        food_tiles=src.food_tiles,
        trap_tiles=src.trap_tiles,
        goal_tiles=src.goal_tiles,
    )


def run_simulation(config: RunConfig) -> RunArtifacts:
    from .config import validate_config

    validate_config(config)  # also syncs the backend's embedding dimension
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    splitter = SeedSplitter(config.seed)
    h = config.hyper
    params = config.persona

    grid = _resolve_map(config, splitter)
    transcript = out / TRANSCRIPT_FILE if config.backend.mode == "http" else None
    if transcript is not None and transcript.exists():
        transcript.unlink()
    backend = make_backend(config.backend, splitter.stream("http-jitter"), params, transcript)

    agents = make_agents(params)
    for kind in PERSONA_ORDER:
        agents[kind].private_weight = h.w_p
        agents[kind].shared_weight = 0.0 if kind is PersonaKind.EMOTION else h.w_s
    qtables = {
        kind: QTable(alpha=h.alpha, gamma=h.gamma, agent_offset=100 * persona_index(kind))
        for kind in PERSONA_ORDER
    }
    latents = {
        kind: init_latent(
            h.embed_dim,
            np.random.default_rng(child_seed(config.seed, f"latent-init:{kind.value}")),
        )
        for kind in PERSONA_ORDER
    }
    trajectories = {
        kind: LatentTrajectory(agent=kind.value, snapshots=[latents[kind]])
        for kind in PERSONA_ORDER
    }
    codebook = StyleCodebook.from_phrases(default_phrases(), backend.embed)
    trust = TrustScores(beta=h.beta, window_size=h.trust_window)
    pool = MemoryPool()
    adoption = AdoptionLog()

    step_lines: list[str] = []
    reflection_lines: list[str] = []
    global_round = 0
    goals_reached = 0
    career_carry = 0.0

    for episode in range(config.rounds):
        entity = EntityState(position=grid.start, career_delta=career_carry)
        memories = retrieve(pool, backend.embed(serialize_state(grid, entity)), h.retrieval_k)
        memory_bias = bias_text(memories)
        episode_embeddings: list[np.ndarray] = []
        episode_shared = 0.0
        episode_rounds = 0

        for round_in_episode in range(config.max_steps_per_episode):
            try:
                record, reflections, done = _run_round(
                    config, grid, entity, agents, qtables, latents, trajectories,
                    codebook, trust, pool, adoption, backend, memory_bias,
                    episode, round_in_episode, global_round,
                )
            except ValueError as exc:
                raise ContractViolation(
                    f"episode {episode}, round {round_in_episode}: {exc}"
                ) from exc
            step_lines.append(json.dumps(record, sort_keys=True))
            for rec in reflections:
                episode_embeddings.append(rec.embedding)
                reflection_lines.append(
                    json.dumps(
                        {
                            "agent": rec.agent.value,
                            "step": rec.step,
                            "text": rec.text,
                            "reward_used": rec.reward_used,
                        },
                        sort_keys=True,
                    )
                )
            episode_shared += record["shared_reward"]
            episode_rounds += 1
            global_round += 1
            if done:
                goals_reached += 1
                break

        pool.append(
            EpisodicEntry(
                episode_id=episode,
                vector=episodic_vector(episode_embeddings),
                total_shared_reward=episode_shared,
                step_count=episode_rounds,
            )
        )
        career_carry = entity.career_delta

    _write_artifacts(
        config, out, grid, step_lines, reflection_lines, trajectories, pool, adoption
    )
    report = analysis.run_analysis(
        trajectories, adoption, out, config.run_id, h.spike_threshold
    )
    logger.info(
        "%s: %d decision steps over %d episodes, %d goals",
        config.run_id, len(adoption), config.rounds, goals_reached,
    )
    return RunArtifacts(
        directory=out,
        report=report,
        episodes=config.rounds,
        decision_steps=len(adoption),
        goals_reached=goals_reached,
    )


def _run_round(
    config: RunConfig,
    grid: GridMap,
    entity: EntityState,
    agents,
    qtables,
    latents,
    trajectories,
    codebook: StyleCodebook,
    trust: TrustScores,
    pool: MemoryPool,
    adoption: AdoptionLog,
    backend,
    memory_bias: str,
    episode: int,
    round_in_episode: int,
    global_round: int,
):
    h = config.hyper
    params = config.persona

    mood = params.mood_pin if params.mood_pin is not None else agents[PersonaKind.EMOTION].mood
    stamina = stamina_from_mood(mood)
    entity.stamina = stamina
    pos_before = entity.position
    career_before = entity.career_delta
    rendered = render_map(grid, entity)

    # Collect the five suggestion bundles in fixed persona order.
    bundles: list[SuggestionBundle] = []
    style_by_kind: dict[PersonaKind, tuple[str, ...]] = {}
    hints_by_kind: dict[PersonaKind, tuple[tuple[Direction, float], ...]] = {}
    for kind in PERSONA_ORDER:
        hints = tuple(
            soft_suggestions(qtables[kind], state_key(pos_before, persona_index(kind)), QHINT_K)
        )
        style = style_decode(latents[kind], codebook, STYLE_K).phrases
        ctx = AgentContext(
            kind=kind,
            grid=grid,
            entity=entity,
            agent=agents[kind],
            q_hint=hints,
            style_tokens=style,
            memory_bias=memory_bias,
            rendered=rendered,
        )
        action, text = backend.suggest(ctx)
        bundles.append(
            SuggestionBundle(
                agent=kind,
                proposed_action=action,
                persuasion_text=text,
                style_tokens=style,
                q_hint=hints,
            )
        )
        style_by_kind[kind] = style
        hints_by_kind[kind] = hints

    mode = "llm" if config.backend.mode == "http" else "stub"
    decider = None
    if mode == "llm":
        prompt = build_meta_prompt(bundles, trust.snapshot(), memory_bias)
        decider = lambda attempt: backend.meta_decide(prompt, rendered, attempt)  # noqa: E731
    decision = arbitrate(bundles, trust, mode=mode, decider=decider)
    adopted_kind, action = decision.agent, decision.action

    # Execute the adopted direction stamina-many times, stopping at the goal.
    micro: list[tuple] = []  # (outcome, prev_distance, new_distance)
    shared = 0.0
    events: set[StepEvent] = set()
    done = False
    for _ in range(stamina):
        prev_d = distance_to_goal(grid, entity.position)
        outcome = step(grid, entity, action)
        new_d = distance_to_goal(grid, entity.position)
        update_career(entity, outcome, params.career_goal_delta, params.career_trap_delta)
        micro.append((outcome, prev_d, new_d))
        shared += outcome.shared_reward
        events |= outcome.events
        if outcome.episode_done:
            done = True
            break
    career_change = entity.career_delta - career_before

    # Private rewards accumulate per micro-move; round-scoped terms (adoption
    # bonus, round decay) ride on the final micro-move's context.
    rewards: dict[PersonaKind, float] = {}
    for kind in PERSONA_ORDER:
        total = 0.0
        for j, (outcome, prev_d, new_d) in enumerate(micro):
            last = j == len(micro) - 1
            ctx = RewardContext(
                outcome=outcome,
                adopted=(kind is adopted_kind and last),
                prev_distance=prev_d,
                new_distance=new_d,
                action=action,
                round_boundary=last,
            )
            total += private_reward(agents[kind], ctx, params)
        rewards[kind] = total

    if params.mood_pin is None:
        update_mood(agents[PersonaKind.EMOTION], rewards[PersonaKind.EMOTION])
    else:
        agents[PersonaKind.EMOTION].mood = params.mood_pin
    agents[PersonaKind.SOCIAL_COGNITION].career_value = entity.career_delta

    composites: dict[PersonaKind, float] = {}
    for kind in PERSONA_ORDER:
        agent = agents[kind]
        comp = composite_reward(rewards[kind], shared, agent.private_weight, agent.shared_weight)
        composites[kind] = comp
        q_update(
            qtables[kind],
            state_key(pos_before, persona_index(kind)),
            action,
            comp,
            state_key(entity.position, persona_index(kind)),
        )

    reflections = []
    for kind in PERSONA_ORDER:
        rec = backend.reflect(
            kind,
            global_round,
            action,
            frozenset(events),
            composites[kind],
            adopted=(kind is adopted_kind),
        )
        reflections.append(rec)
        latents[kind] = latent_update(latents[kind], rec.embedding, composites[kind], h.eta)
        trajectories[kind].append(latents[kind])

    trust_update(trust, adopted_kind, shared)
    social_trust_boost(trust, career_change, params.social_boost_rate)
    for kind in PERSONA_ORDER:
        agents[kind].last_action = action

    trust_snapshot = trust.snapshot()
    adoption.append(
        AdoptionRecord(
            step=global_round,
            episode=episode,
            agent=adopted_kind,
            action=action,
            trust=trust_snapshot,
            shared_reward=shared,
        )
    )

    record = {
        "episode": episode,
        "step": round_in_episode,
        "global_step": global_round,
        "stamina": stamina,
        "pos_before": list(pos_before),
        "pos_after": list(entity.position),
        "bundles": {
            b.agent.value: {
                "action": b.proposed_action.value,
                "text": b.persuasion_text,
                "style": list(b.style_tokens),
                "q_hint": [[d.value, v] for d, v in b.q_hint],
            }
            for b in bundles
        },
        "adopted_agent": adopted_kind.value,
        "adopted_action": action.value,
        "arbitration_fallback": decision.used_fallback,
        "events": sorted(e.value for e in events),
        "shared_reward": shared,
        "rewards": {
            kind.value: {
                "r_p": rewards[kind],
                "w_p": agents[kind].private_weight,
                "w_s": agents[kind].shared_weight,
                "composite": composites[kind],
            }
            for kind in PERSONA_ORDER
        },
        "mood": agents[PersonaKind.EMOTION].mood,
        "career": entity.career_delta,
        "trust": {kind.value: trust_snapshot[kind] for kind in PERSONA_ORDER},
        "reflection_id": global_round,
        "latent_id": global_round + 1,
    }
    return record, reflections, done


def _write_artifacts(
    config: RunConfig,
    out: Path,
    grid: GridMap,
    step_lines: list[str],
    reflection_lines: list[str],
    trajectories,
    pool: MemoryPool,
    adoption: AdoptionLog,
) -> None:
    from .meta_controller import export_adoption_csv

    # The echo normalizes the output dir: rerun from inside the artifact
    # directory, it reproduces in place, and echoes stay location-independent.
    import copy

    echoed = copy.deepcopy(config)
    echoed.output_dir = "."
    (out / CONFIG_FILE).write_text(format_config(echoed), encoding="utf-8")
    (out / MAP_FILE).write_text(format_map(grid), encoding="utf-8")
    initial = EntityState(position=grid.start)
    (out / MAP_IMAGE_FILE).write_bytes(render_map(grid, initial).png_bytes)
    (out / STEPS_FILE).write_text(
        "".join(line + "\n" for line in step_lines), encoding="utf-8"
    )
    (out / REFLECTIONS_FILE).write_text(
        "".join(line + "\n" for line in reflection_lines), encoding="utf-8"
    )
    for kind in PERSONA_ORDER:
        traj = trajectories[kind]
        export_trajectory_csv(traj, out / f"latents_{kind.value}.csv")
        export_trajectory_binary(traj, out / f"latents_{kind.value}.f64")
    save_pool(pool, out / POOL_INDEX_FILE, out / POOL_VECTOR_FILE)
    export_adoption_csv(adoption, out / ADOPTION_FILE)
    # Rebuilt from the step log rather than taken live, so replay regenerates
    # byte-identical CSV output from the same source of truth.
    export_qtables_csv(_rebuild_qtables_from_steps(config, step_lines), out / QTABLE_FILE)


def _rebuild_qtables_from_steps(config: RunConfig, step_lines: list[str]) -> dict[PersonaKind, QTable]:
    """Q-tables are a pure function of the step log; rebuilding keeps export and replay aligned."""
    h = config.hyper
    tables = {
        kind: QTable(alpha=h.alpha, gamma=h.gamma, agent_offset=100 * persona_index(kind))
        for kind in PERSONA_ORDER
    }
    for line in step_lines:
        rec = json.loads(line)
        action = Direction(rec["adopted_action"])
        for kind in PERSONA_ORDER:
            q_update(
                tables[kind],
                state_key(tuple(rec["pos_before"]), persona_index(kind)),
                action,
                rec["rewards"][kind.value]["composite"],
                state_key(tuple(rec["pos_after"]), persona_index(kind)),
            )
    return tables


_REQUIRED_STEP_FIELDS = (
    "episode",
    "step",
    "global_step",
    "stamina",
    "pos_before",
    "pos_after",
    "adopted_agent",
    "adopted_action",
    "events",
    "shared_reward",
    "rewards",
    "trust",
)


def _read_step_records(out: Path) -> list[dict]:
    steps_path = out / STEPS_FILE
    if not steps_path.exists():
        raise ReplayError(f"{steps_path} is missing")
    records: list[dict] = []
    with open(steps_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                raise ReplayError(f"{STEPS_FILE} record {lineno}: blank line")
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReplayError(f"{STEPS_FILE} record {lineno}: invalid JSON ({exc})") from exc
            for fieldname in _REQUIRED_STEP_FIELDS:
                if fieldname not in rec:
                    raise ReplayError(f"{STEPS_FILE} record {lineno}: missing field {fieldname!r}")
            if rec["global_step"] != lineno - 1:
                raise ReplayError(
                    f"{STEPS_FILE} record {lineno}: global_step {rec['global_step']} "
                    f"does not match position {lineno - 1}"
                )
            for agent_name, reward in rec["rewards"].items():
                expected = reward["w_p"] * reward["r_p"] + reward["w_s"] * rec["shared_reward"]
                if expected != reward["composite"]:
                    raise ReplayError(
                        f"{STEPS_FILE} record {lineno}: composite reward for {agent_name} "
                        f"does not recompute from its parts ({expected!r} vs {reward['composite']!r})"
                    )
            records.append(rec)
    return records


def _load_run_dir(artifact_dir) -> tuple[RunConfig, list[dict], dict[PersonaKind, LatentTrajectory]]:
    out = Path(artifact_dir)
    config_path = out / CONFIG_FILE
    if not config_path.exists():
        raise ReplayError(f"{config_path} is missing")
    config = parse_config_text(config_path.read_text(encoding="utf-8"))
    records = _read_step_records(out)
    trajectories: dict[PersonaKind, LatentTrajectory] = {}
    for kind in PERSONA_ORDER:
        path = out / f"latents_{kind.value}.f64"
        if not path.exists():
            raise ReplayError(f"{path} is missing")
        try:
            trajectories[kind] = load_trajectory_binary(path, config.hyper.embed_dim, kind.value)
        except ValueError as exc:
            raise ReplayError(str(exc)) from exc
        if len(trajectories[kind]) != len(records) + 1:
            raise ReplayError(
                f"latents_{kind.value}.f64 holds {len(trajectories[kind])} snapshots, "
                f"expected {len(records) + 1} (one per decision step plus the initial vector)"
            )
    return config, records, trajectories


def _adoption_log_from_records(records: list[dict]) -> AdoptionLog:
    log = AdoptionLog()
    for rec in records:
        log.append(
            AdoptionRecord(
                step=rec["global_step"],
                episode=rec["episode"],
                agent=PersonaKind(rec["adopted_agent"]),
                action=Direction(rec["adopted_action"]),
                trust={PersonaKind(k): v for k, v in rec["trust"].items()},
                shared_reward=rec["shared_reward"],
            )
        )
    return log


def replay(artifact_dir) -> RunArtifacts:
    """Recompute every derived artifact from the persisted step log and latents.

    Regenerates the adoption CSV, the Q-table snapshot and all analysis
    outputs; results are byte-identical to what the original run wrote.
    """
    from .meta_controller import export_adoption_csv
    from .memory_pool import load_pool

    out = Path(artifact_dir)
    config, records, trajectories = _load_run_dir(out)
    log = _adoption_log_from_records(records)
    export_adoption_csv(log, out / ADOPTION_FILE)
    export_qtables_csv(
        _rebuild_qtables_from_steps(config, [json.dumps(r, sort_keys=True) for r in records]),
        out / QTABLE_FILE,
    )
    # Validate the memory pool files load cleanly alongside the step log.
    try:
        pool = load_pool(out / POOL_INDEX_FILE, out / POOL_VECTOR_FILE, config.hyper.embed_dim)
    except (OSError, ValueError) as exc:
        raise ReplayError(f"memory pool artifacts unreadable: {exc}") from exc
    episodes = {rec["episode"] for rec in records}
    if len(pool) != len(episodes):
        raise ReplayError(
            f"memory pool holds {len(pool)} entries but the step log covers {len(episodes)} episodes"
        )
    report = analysis.run_analysis(
        trajectories, log, out, config.run_id, config.hyper.spike_threshold
    )
    goals = sum(1 for rec in records if rec["shared_reward"] > 0)
    return RunArtifacts(
        directory=out,
        report=report,
        episodes=len(episodes),
        decision_steps=len(records),
        goals_reached=goals,
    )


def analyze(artifact_dir) -> dict:
    """Recompute only the analysis outputs (CSVs plus the combined JSON report)."""
    out = Path(artifact_dir)
    config, records, trajectories = _load_run_dir(out)
    log = _adoption_log_from_records(records)
    return analysis.run_analysis(trajectories, log, out, config.run_id, config.hyper.spike_threshold)
