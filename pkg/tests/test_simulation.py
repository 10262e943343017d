"""End-to-end runs: determinism, artifact integrity, replay, and the CLI."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from gridcouncil.cli import main as cli_main
from gridcouncil.config import RunConfig
from gridcouncil.simulation import ReplayError, analyze, replay, run_simulation

DIM = 96  # small embedding dimension keeps these runs quick


def quick_config(tmp_path: Path, seed: int = 21, rounds: int = 2, **kwargs) -> RunConfig:
    config = RunConfig(seed=seed, rounds=rounds, output_dir=str(tmp_path / f"run_s{seed}"))
    config.hyper.embed_dim = DIM
    config.max_steps_per_episode = kwargs.pop("max_steps", 40)
    for key, value in kwargs.items():
        setattr(config, key, value)
    return config


def line_map(tmp_path: Path) -> str:
    rows = ["".join("G" if (x, y) == (9, 0) else "S" for x in range(10)) for y in range(10)]
    path = tmp_path / "line.map"
    path.write_text("start 0 0\n" + "\n".join(rows) + "\n")
    return str(path)


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sim")
    config = quick_config(tmp)
    artifacts = run_simulation(config)
    return config, artifacts


class TestRun:
    def test_memory_pool_one_entry_per_episode(self, completed_run):
        config, artifacts = completed_run
        lines = (artifacts.directory / "memory_pool.jsonl").read_text().splitlines()
        assert len(lines) == config.rounds

    def test_step_records_are_replayable_json(self, completed_run):
        _, artifacts = completed_run
        for line in (artifacts.directory / "steps.jsonl").read_text().splitlines():
            rec = json.loads(line)
            for agent, reward in rec["rewards"].items():
                assert reward["composite"] == reward["w_p"] * reward["r_p"] + reward["w_s"] * rec["shared_reward"]

    def test_trajectory_length_tracks_reflections(self, completed_run):
        _, artifacts = completed_run
        steps = len((artifacts.directory / "steps.jsonl").read_text().splitlines())
        reflections = (artifacts.directory / "reflections.jsonl").read_text().splitlines()
        by_agent: dict[str, int] = {}
        for line in reflections:
            rec = json.loads(line)
            by_agent[rec["agent"]] = by_agent.get(rec["agent"], 0) + 1
        assert all(count == steps for count in by_agent.values())
        # latent binaries: initial snapshot plus one per reflection
        raw = (artifacts.directory / "latents_Rational.f64").read_bytes()
        assert len(raw) == (steps + 1) * DIM * 8

    def test_adoption_csv_populated(self, completed_run):
        _, artifacts = completed_run
        lines = (artifacts.directory / "adoption.csv").read_text().splitlines()
        assert len(lines) == artifacts.decision_steps + 1  # header + one per step

    def test_analysis_outputs_exist(self, completed_run):
        config, artifacts = completed_run
        for metric in ("cosine_to_first", "l2_delta", "spikes", "adoption_counts", "pca2d", "report"):
            suffix = ".json" if metric == "report" else ".csv"
            assert (artifacts.directory / f"{config.run_id}_{metric}{suffix}").exists()


class TestDeterminism:
    def test_identical_config_identical_bytes(self, tmp_path):
        a = quick_config(tmp_path / "a", seed=33)
        b = quick_config(tmp_path / "b", seed=33)
        run_simulation(a)
        run_simulation(b)
        dir_a, dir_b = Path(a.output_dir), Path(b.output_dir)
        names_a = sorted(p.name for p in dir_a.iterdir())
        names_b = sorted(p.name for p in dir_b.iterdir())
        assert names_a == names_b
        for name in names_a:
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes(), name

    def test_different_seeds_diverge(self, tmp_path):
        a = quick_config(tmp_path / "a", seed=1)
        b = quick_config(tmp_path / "b", seed=2)
        run_simulation(a)
        run_simulation(b)
        steps_a = (Path(a.output_dir) / "steps.jsonl").read_bytes()
        steps_b = (Path(b.output_dir) / "steps.jsonl").read_bytes()
        assert steps_a != steps_b


class TestReplay:
    def test_metrics_identical_after_replay(self, tmp_path):
        config = quick_config(tmp_path, seed=55)
        artifacts = run_simulation(config)
        out = artifacts.directory
        regenerated = [
            p
            for p in out.iterdir()
            if p.name.startswith(config.run_id) or p.name in ("adoption.csv", "qtable.csv")
        ]
        originals = {p.name: p.read_bytes() for p in regenerated}
        for p in regenerated:
            p.unlink()
        result = replay(out)
        assert result.decision_steps == artifacts.decision_steps
        for name, data in originals.items():
            assert (out / name).read_bytes() == data, f"{name} changed under replay"

    def test_truncated_log_diagnosed(self, tmp_path):
        config = quick_config(tmp_path, seed=56)
        out = run_simulation(config).directory
        steps = out / "steps.jsonl"
        lines = steps.read_text().splitlines()
        lines[4] = lines[4][: len(lines[4]) // 2]
        steps.write_text("\n".join(lines) + "\n")
        with pytest.raises(ReplayError, match="record 5"):
            replay(out)

    def test_tampered_composite_diagnosed(self, tmp_path):
        config = quick_config(tmp_path, seed=57)
        out = run_simulation(config).directory
        steps = out / "steps.jsonl"
        lines = steps.read_text().splitlines()
        rec = json.loads(lines[0])
        rec["rewards"]["Rational"]["composite"] += 0.125
        lines[0] = json.dumps(rec, sort_keys=True)
        steps.write_text("\n".join(lines) + "\n")
        with pytest.raises(ReplayError, match="composite"):
            replay(out)

    def test_missing_directory_diagnosed(self, tmp_path):
        with pytest.raises(ReplayError, match="missing"):
            replay(tmp_path / "nowhere")

    def test_analyze_according_to_stored_config(self, tmp_path):
        config = quick_config(tmp_path, seed=58)
        out = run_simulation(config).directory
        report = analyze(out)
        assert report["run_id"] == config.run_id
        assert report["decision_steps"] > 0


class TestRunVolume:
    def test_six_round_run_pool_and_reflection_volume(self, tmp_path):
        # slow entity + far goal: every episode needs at least 9 rounds, so the
        # run crosses 50 reflections per agent and banks 6 pool entries
        config = quick_config(tmp_path, seed=88, rounds=6, max_steps=60)
        config.persona.mood_pin = 0.0
        config.map_source.file = line_map(tmp_path)
        artifacts = run_simulation(config)
        pool_lines = (artifacts.directory / "memory_pool.jsonl").read_text().splitlines()
        assert len(pool_lines) == 6
        steps = len((artifacts.directory / "steps.jsonl").read_text().splitlines())
        assert steps >= 50
        for agent in ("Rational", "Emotion", "RiskMonitor", "Habitual", "SocialCognition"):
            raw = (artifacts.directory / f"latents_{agent}.f64").read_bytes()
            assert len(raw) == (steps + 1) * DIM * 8


class TestMoodStaminaChain:
    def test_pinned_mood_changes_round_counts(self, tmp_path):
        path = line_map(tmp_path)
        per_pin: dict[float, dict[int, int]] = {}
        for pin in (0.0, 2.0):
            config = quick_config(tmp_path / f"pin{pin}", seed=5, rounds=1, max_steps=60)
            config.map_source.file = path
            config.persona.mood_pin = pin
            run_simulation(config)
            rounds_per_episode: dict[int, int] = {}
            stamina_seen = set()
            for line in (Path(config.output_dir) / "steps.jsonl").read_text().splitlines():
                rec = json.loads(line)
                rounds_per_episode[rec["episode"]] = rounds_per_episode.get(rec["episode"], 0) + 1
                stamina_seen.add(rec["stamina"])
            per_pin[pin] = rounds_per_episode
            assert stamina_seen == ({1} if pin == 0.0 else {6})
        assert per_pin[2.0][0] < per_pin[0.0][0]


class TestCli:
    def test_run_and_replay_commands(self, tmp_path, capsys):
        cfg_path = tmp_path / "run.cfg"
        out_dir = tmp_path / "out"
        cfg_path.write_text(
            "run.seed = 9\nrun.rounds = 1\nrun.max_steps_per_episode = 15\n"
            f"run.output_dir = {out_dir}\nhyper.embed_dim = 64\n"
        )
        assert cli_main(["run", "--config", str(cfg_path)]) == 0
        assert "decision steps" in capsys.readouterr().out
        assert cli_main(["replay", "--dir", str(out_dir)]) == 0
        assert cli_main(["analyze", "--dir", str(out_dir)]) == 0

    def test_flag_overrides(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("run.seed = 9\nhyper.embed_dim = 64\nrun.max_steps_per_episode = 15\n")
        out_dir = tmp_path / "flagged"
        code = cli_main(
            ["run", "--config", str(cfg_path), "--seed", "77", "--rounds", "1", "--out", str(out_dir)]
        )
        assert code == 0
        echoed = (out_dir / "config_resolved.txt").read_text()
        assert "run.seed = 77" in echoed
        assert "run.rounds = 1" in echoed

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("run.warp = 9\n")
        assert cli_main(["run", "--config", str(bad)]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_missing_config_exit_code(self, tmp_path):
        assert cli_main(["run", "--config", str(tmp_path / "none.cfg")]) == 2

    def test_corrupt_replay_exit_code(self, tmp_path, capsys):
        cfg_path = tmp_path / "run.cfg"
        out_dir = tmp_path / "out"
        cfg_path.write_text(
            f"run.seed = 9\nrun.rounds = 1\nrun.output_dir = {out_dir}\n"
            "hyper.embed_dim = 64\nrun.max_steps_per_episode = 10\n"
        )
        assert cli_main(["run", "--config", str(cfg_path)]) == 0
        steps = out_dir / "steps.jsonl"
        steps.write_text(steps.read_text()[:40])
        assert cli_main(["replay", "--dir", str(out_dir)]) == 4

    def test_gen_map_command(self, tmp_path):
        out = tmp_path / "m.map"
        assert cli_main(["gen-map", "--seed", "3", "--out", str(out)]) == 0
        text = out.read_text().splitlines()
        assert text[0].startswith("start ")
        assert len(text) == 11

    def test_http_mode_without_key_exits_3(self, tmp_path, monkeypatch):
        monkeypatch.delenv("NO_SUCH_KEY_SET", raising=False)
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(
            "run.seed = 1\nbackend.mode = http\nbackend.base_url = http://127.0.0.1:9\n"
            "backend.api_key_env = NO_SUCH_KEY_SET\nhyper.embed_dim = 64\n"
        )
        assert cli_main(["run", "--config", str(cfg_path)]) == 3
