"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines alongside pytest's own verdicts.
"""

from __future__ import annotations

import base64
import json
import math
import time
from pathlib import Path
from random import Random

import numpy as np
import pytest

from gridcouncil.analysis import detect_spikes, l2_deltas, pca2d
from gridcouncil.behavior_loop import QTable, q_update
from gridcouncil.config import RunConfig
from gridcouncil.grid_env import (
    DIRECTION_ORDER,
    Direction,
    EntityState,
    StepEvent,
    TransitionOutcome,
    generate_map,
    stamina_from_mood,
    step as env_step,
)
from gridcouncil.language_loop import (
    LatentTrajectory,
    LatentVector,
    cosine,
    init_latent,
    latent_update,
)
from gridcouncil.memory_pool import episodic_vector, retrieve
from gridcouncil.meta_controller import (
    AdoptionLog,
    AdoptionRecord,
    SuggestionBundle,
    TrustScores,
    arbitrate,
    trust_update,
)
from gridcouncil.personas import (
    PERSONA_ORDER,
    AgentState,
    PersonaKind,
    RewardContext,
    private_reward,
    update_mood,
)
from gridcouncil.simulation import run_simulation

from tests.test_behavior_loop import train_q, value_iteration
from tests.test_memory_pool import brute_force_top_k, make_pool


def report(criterion: str, detail: str) -> None:
    print(f"[PASS] {criterion}: {detail}")


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    """Two full default-scale 6-round stub runs with identical config and seed."""
    tmp = tmp_path_factory.mktemp("acceptance")
    elapsed = []
    dirs = []
    for name in ("first", "second"):
        config = RunConfig(seed=2026, output_dir=str(tmp / name))
        t0 = time.monotonic()
        run_simulation(config)
        elapsed.append(time.monotonic() - t0)
        dirs.append(Path(config.output_dir))
    return dirs, elapsed


def test_criterion_01_q_update_arithmetic_and_value_iteration_oracle():
    t0 = time.monotonic()
    table = QTable(alpha=0.1, gamma=0.9)
    q_update(table, (0, 0), Direction.UP, 1.0, (5, 5))
    assert table.value((0, 0), Direction.UP) == 0.1  # exact

    trained = train_q(500)
    q_star = value_iteration(0.9)
    for state, star_row in q_star.items():
        best = max(star_row.values())
        optimal = {a for a, v in star_row.items() if abs(v - best) < 1e-9}
        greedy = max(DIRECTION_ORDER, key=lambda a: trained.value(state, a))
        assert greedy in optimal
    elapsed = time.monotonic() - t0
    assert elapsed < 1.0
    report(
        "criterion 1 (Q update)",
        f"single-step result exactly 0.1; greedy policy matches value iteration ({elapsed:.3f}s)",
    )


def test_criterion_02_trust_arithmetic_and_argmax_invariance():
    trust = TrustScores(beta=0.1)
    trust.window.extend([0.0, 1.0])  # window mean 0.5
    trust_update(trust, PersonaKind.RATIONAL, 1.0)
    assert trust.scores[PersonaKind.RATIONAL] == 1.05  # exact

    bundles = [
        SuggestionBundle(
            agent=kind,
            proposed_action=Direction.UP,
            persuasion_text="",
            style_tokens=(),
            q_hint=(),
        )
        for kind in PERSONA_ORDER
    ]
    rng = Random(424242)
    violations = 0
    for _ in range(1000):
        base = TrustScores()
        for kind in PERSONA_ORDER:
            base.scores[kind] = rng.uniform(0.01, 10.0)
        chosen = arbitrate(bundles, base).agent
        scale = rng.uniform(1e-3, 1e3)
        scaled = TrustScores()
        for kind in PERSONA_ORDER:
            scaled.scores[kind] = base.scores[kind] * scale
        if arbitrate(bundles, scaled).agent is not chosen:
            violations += 1
    assert violations == 0
    report(
        "criterion 2 (trust update)",
        "1.0 + 0.1*(1.0-0.5) exactly 1.05; 1000/1000 rescalings preserve the argmax",
    )


def test_criterion_03_latent_contraction_and_convergence():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(2, 256))
        z = LatentVector(values=rng.standard_normal(dim))
        e = rng.standard_normal(dim)
        e /= np.linalg.norm(e)
        reward = float(rng.uniform(-3, 3))
        eta = float(rng.uniform(0, 1))
        z2 = latent_update(z, e, reward, eta)
        lhs = float(np.linalg.norm(z2.values - e))
        rhs = (1.0 - eta * math.tanh(reward)) * float(np.linalg.norm(z.values - e))
        worst = max(worst, abs(lhs - rhs))
    assert worst < 1e-9

    target = rng.standard_normal(3077)
    target /= np.linalg.norm(target)
    z = init_latent(3077, rng)
    steps_needed = None
    for i in range(200):
        z = latent_update(z, target, reward=1.0, eta=0.1)
        if steps_needed is None and cosine(z.values, target) > 0.99:
            steps_needed = i + 1
    assert steps_needed is not None and steps_needed <= 200
    report(
        "criterion 3 (latent update)",
        f"contraction identity holds to {worst:.2e}; cosine>0.99 after {steps_needed} updates",
    )


def test_criterion_04_episodic_mean_and_retrieval_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        count = int(rng.integers(1, 12))
        dim = int(rng.integers(2, 64))
        vectors = [rng.standard_normal(dim) for _ in range(count)]
        mean = episodic_vector(vectors)
        for j in range(dim):
            total = 0.0
            for v in vectors:
                total += float(v[j])
            assert abs(mean[j] - total / count) < 1e-12

    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        dim = int(rng.integers(2, 12))
        k = int(rng.integers(1, 6))
        pool = make_pool(rng, n, dim)
        query = rng.standard_normal(dim)
        got = [m.entry.episode_id for m in retrieve(pool, query, k)]
        if got != brute_force_top_k(pool, query, k):
            mismatches += 1
    assert mismatches == 0
    report(
        "criterion 4 (episodic memory)",
        "means match summation oracle to 1e-12; 1000/1000 retrievals match the exhaustive scan",
    )


def test_criterion_05_spike_detection_and_stabilization():
    # flips injected at steps 15/30/45 spike past 0.6; everything else stays low
    rng = np.random.default_rng(11)
    dim = 128
    rows = [rng.standard_normal(dim)]
    rows[0] /= np.linalg.norm(rows[0])
    for t in range(1, 51):
        prev = rows[-1]
        if t in (15, 30, 45):
            rows.append(-prev)
        else:
            rows.append(prev + 0.07 * rng.standard_normal(dim) / math.sqrt(dim))
    traj = LatentTrajectory(
        agent="synthetic",
        snapshots=[LatentVector(values=r, step_index=i) for i, r in enumerate(rows)],
    )
    deltas = l2_deltas(traj)
    assert detect_spikes(deltas, 0.6) == [15, 30, 45]

    # stationary embeddings with positive reward: late updates smaller than early
    z = init_latent(512, np.random.default_rng(13))
    draw = np.random.default_rng(17)
    deltas2: list[float] = []
    for _ in range(50):
        e = draw.standard_normal(512)
        e /= np.linalg.norm(e)
        z2 = latent_update(z, e, reward=1.0, eta=0.1)
        deltas2.append(float(np.linalg.norm(z2.values - z.values)))
        z = z2
    early = sum(deltas2[0:10]) / 10
    late = sum(deltas2[40:50]) / 10
    assert late < early
    report(
        "criterion 5 (latent shift series)",
        f"spikes exactly {{15, 30, 45}}; mean L2 late {late:.4f} < early {early:.4f}",
    )


def test_criterion_06_pca_oracle_and_scale():
    rng = np.random.default_rng(19)
    points = rng.standard_normal((40, 5)) * np.array([4.0, 2.5, 1.0, 0.5, 0.1])
    result = pca2d(points)
    centered = points - points.mean(axis=0)
    eigvals, eigvecs = np.linalg.eigh(centered.T @ centered / (points.shape[0] - 1))
    order = np.argsort(eigvals)[::-1]
    worst = 0.0
    for comp in range(2):
        oracle_scores = centered @ eigvecs[:, order[comp]]
        got = result.scores[:, comp]
        worst = max(
            worst,
            min(
                float(np.max(np.abs(got - oracle_scores))),
                float(np.max(np.abs(got + oracle_scores))),
            ),
        )
    assert worst < 1e-6

    basis = np.linalg.qr(rng.standard_normal((64, 2)))[0][:, :2].T
    planar = (rng.standard_normal((30, 2)) * np.array([3.0, 1.5])) @ basis
    ratio = sum(pca2d(planar).explained_variance_ratio)
    assert ratio > 1 - 1e-6

    big = rng.standard_normal((50, 3077))
    t0 = time.monotonic()
    pca2d(big)
    elapsed = time.monotonic() - t0
    assert elapsed < 5.0
    report(
        "criterion 6 (PCA projection)",
        f"eigensolver agreement {worst:.2e}; planar ratio {ratio:.9f}; N=50,D=3077 in {elapsed:.3f}s",
    )


def test_criterion_07_adoption_counts_and_populated_csv(full_runs):
    rng = Random(23)
    for _ in range(1000):
        log = AdoptionLog()
        n = rng.randrange(0, 40)
        for i in range(n):
            log.append(
                AdoptionRecord(
                    step=i,
                    episode=0,
                    agent=PERSONA_ORDER[rng.randrange(5)],
                    action=DIRECTION_ORDER[rng.randrange(4)],
                    trust={k: 1.0 for k in PERSONA_ORDER},
                    shared_reward=0.0,
                )
            )
        assert sum(log.counts().values()) == n == len(log)

    dirs, _ = full_runs
    adoption_lines = (dirs[0] / "adoption.csv").read_text().splitlines()
    assert len(adoption_lines) > 1
    counts_csv = (dirs[0] / "run2026_adoption_counts.csv").read_text().splitlines()
    totals = sum(int(line.split(",")[1]) for line in counts_csv[1:])
    assert totals == len(adoption_lines) - 1
    report(
        "criterion 7 (adoption accounting)",
        f"1000 fuzzed logs sum exactly; 6-round run logged {totals} adoptions",
    )


def test_criterion_08_mood_stamina_efficiency_chain(tmp_path):
    rows = ["".join("G" if (x, y) == (9, 0) else "S" for x in range(10)) for y in range(10)]
    map_path = tmp_path / "line.map"
    map_path.write_text("start 0 0\n" + "\n".join(rows) + "\n")
    assert stamina_from_mood(0.0) == 1
    assert stamina_from_mood(2.0) == 6
    rounds_used = {}
    for pin in (0.0, 2.0):
        config = RunConfig(seed=5, rounds=1, output_dir=str(tmp_path / f"pin{pin}"))
        config.hyper.embed_dim = 128
        config.map_source.file = str(map_path)
        config.persona.mood_pin = pin
        run_simulation(config)
        records = [
            json.loads(line)
            for line in (tmp_path / f"pin{pin}" / "steps.jsonl").read_text().splitlines()
        ]
        assert {r["stamina"] for r in records} == ({1} if pin == 0.0 else {6})
        rounds_used[pin] = len(records)
    assert rounds_used[2.0] < rounds_used[0.0]
    report(
        "criterion 8 (mood chain)",
        f"stamina 1 vs 6; rounds to goal {rounds_used[0.0]} (low) vs {rounds_used[2.0]} (high)",
    )


def test_criterion_09_reward_table_magnitudes():
    def ctx(*events, adopted=False, boundary=False, action=Direction.UP, last=None):
        outcome = TransitionOutcome(
            new_position=(0, 0),
            events=frozenset(events),
            shared_reward=1.0 if StepEvent.REACHED_GOAL in events else 0.0,
            episode_done=StepEvent.REACHED_GOAL in events,
        )
        return RewardContext(
            outcome=outcome,
            adopted=adopted,
            prev_distance=1.0,
            new_distance=1.0,
            action=action,
            round_boundary=boundary,
        )

    emotion = AgentState(kind=PersonaKind.EMOTION)
    assert private_reward(emotion, ctx(StepEvent.ATE_FOOD)) == 0.5
    assert private_reward(emotion, ctx(adopted=True)) == 0.3
    assert private_reward(emotion, ctx(StepEvent.HIT_TRAP)) == -1.0
    assert private_reward(emotion, ctx(boundary=True)) == -0.05

    habitual = AgentState(kind=PersonaKind.HABITUAL, last_action=Direction.UP)
    assert private_reward(habitual, ctx(action=Direction.UP)) == 0.2

    grid = generate_map(Random(2))
    goal = grid.goal_cells()[0]
    entity = EntityState(position=(goal[0] - 1, goal[1]) if goal[0] > 0 else (goal[0] + 1, goal[1]))
    outcome = env_step(grid, entity, Direction.RIGHT if goal[0] > 0 else Direction.LEFT)
    assert outcome.shared_reward == 1.0

    clamp_low = AgentState(kind=PersonaKind.EMOTION, mood=0.5)
    assert update_mood(clamp_low, -2.0) == 0.0
    clamp_high = AgentState(kind=PersonaKind.EMOTION, mood=1.9)
    assert update_mood(clamp_high, 0.5) == 2.0
    report(
        "criterion 9 (reward table)",
        "+0.5 food, +0.3 adoption, -1.0 trap, -0.05 decay, +0.2 habit, +1.0 shared goal, clamps at 0 and 2",
    )


def test_criterion_10_end_to_end_determinism(full_runs):
    dirs, elapsed = full_runs
    names = sorted(p.name for p in dirs[0].iterdir())
    assert names == sorted(p.name for p in dirs[1].iterdir())
    for name in names:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name
    assert max(elapsed) < 30.0
    report(
        "criterion 10 (determinism)",
        f"{len(names)} artifact files byte-identical across runs; slowest run {max(elapsed):.2f}s",
    )


def test_criterion_11_render_pipeline_and_wire_format(tmp_path, monkeypatch):
    import threading
    from http.server import HTTPServer

    from gridcouncil.lm_backend import BackendConfig, HttpBackend, render_map
    from gridcouncil.personas import AgentState as AS

    from tests.test_http_backend import MockHandler

    grid = generate_map(Random(4))
    rendered = render_map(grid, EntityState(position=grid.start))
    png = rendered.png_bytes
    assert png[:8] == b"\x89PNG\r\n\x1a\n"
    assert png[12:16] == b"IHDR"
    assert int.from_bytes(png[16:20], "big") == 320
    assert int.from_bytes(png[20:24], "big") == 320
    assert base64.b64decode(rendered.base64_payload) == png

    server = HTTPServer(("127.0.0.1", 0), MockHandler)
    server.requests = []
    server.fail_remaining = 0
    server.chat_replies = ["MOVE Right: clear path."]
    server.chat_calls = 0
    server.embedding = [0.1] * 8
    thread = threading.Thread(target=lambda: server.serve_forever(poll_interval=0.02), daemon=True)
    thread.start()
    try:
        monkeypatch.setenv("ACCEPT_KEY", "sk-accept")
        config = BackendConfig(
            mode="http",
            base_url=f"http://127.0.0.1:{server.server_address[1]}",
            api_key_env="ACCEPT_KEY",
            embed_dim=8,
        )
        backend = HttpBackend(config, Random(1), sleep=lambda s: None)
        from gridcouncil.lm_backend import AgentContext

        ctx = AgentContext(
            kind=PersonaKind.RATIONAL,
            grid=grid,
            entity=EntityState(position=grid.start),
            agent=AS(kind=PersonaKind.RATIONAL),
            q_hint=((Direction.UP, 0.0),),
            style_tokens=(),
            memory_bias="",
            rendered=rendered,
        )
        backend.suggest(ctx)
        request = server.requests[0]["body"]
        url = request["messages"][0]["content"][1]["image_url"]["url"]
        assert url.startswith("data:image/png;base64,")
        assert base64.b64decode(url.split(",", 1)[1]) == png
    finally:
        server.shutdown()
        thread.join(timeout=2)
    report(
        "criterion 11 (render pipeline)",
        "320x320 PNG via header parse, exact base64 round-trip, data URL verified on a mock server",
    )
