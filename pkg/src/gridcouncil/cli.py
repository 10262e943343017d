"""Command line entry point: run, replay, analyze, gen-map.

Exit codes: 0 success, 2 configuration error, 3 backend failure, 4 contract
violation or corrupt artifacts.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, apply_overrides, load_config
from .grid_env import MapFormatError, format_map, generate_map
from .lm_backend import BackendSetupError
from .rng import SeedSplitter
from .simulation import ContractViolation, ReplayError, analyze, replay, run_simulation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_CONTRACT = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridcouncil",
        description=(
            "Deterministic multi-advisor gridworld simulator: five persona agents "
            "persuade a trust-weighted controller while learning Q-tables and "
            "latent persuasion styles."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a full simulation run")
    run_p.add_argument("--config", required=True, help="run config file (section.key = value)")
    run_p.add_argument("--seed", type=int, help="override run.seed")
    run_p.add_argument("--backend", choices=["stub", "http"], help="override backend.mode")
    run_p.add_argument("--rounds", type=int, help="override run.rounds (episode count)")
    run_p.add_argument("--out", help="override run.output_dir")

    replay_p = sub.add_parser("replay", help="recompute derived artifacts from a run directory")
    replay_p.add_argument("--dir", required=True, help="artifact directory written by run")

    analyze_p = sub.add_parser("analyze", help="recompute only the analysis outputs")
    analyze_p.add_argument("--dir", required=True, help="artifact directory written by run")

    genmap_p = sub.add_parser("gen-map", help="generate a seeded random map file")
    genmap_p.add_argument("--seed", type=int, required=True)
    genmap_p.add_argument("--out", required=True, help="destination map file")
    genmap_p.add_argument("--food", type=int, default=5, help="food tile count (default 5)")
    genmap_p.add_argument("--traps", type=int, default=8, help="trap tile count (default 8)")
    genmap_p.add_argument("--goals", type=int, default=1, help="goal tile count (default 1)")
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    apply_overrides(
        config,
        seed=args.seed,
        backend_mode=args.backend,
        rounds=args.rounds,
        output_dir=args.out,
    )
    artifacts = run_simulation(config)
    print(f"run complete: {artifacts.decision_steps} decision steps over {artifacts.episodes} episodes")
    print(f"goals reached: {artifacts.goals_reached}")
    print(f"artifacts: {artifacts.directory}")
    return EXIT_OK


def _cmd_replay(args) -> int:
    artifacts = replay(args.dir)
    print(f"replay verified {artifacts.decision_steps} decision steps over {artifacts.episodes} episodes")
    print(f"artifacts regenerated in {artifacts.directory}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    report = analyze(args.dir)
    print(f"analysis written for {report['run_id']}: {report['decision_steps']} decision steps")
    return EXIT_OK


def _cmd_gen_map(args) -> int:
    grid = generate_map(
        SeedSplitter(args.seed).stream("map"),
        food_tiles=args.food,
        trap_tiles=args.traps,
        goal_tiles=args.goals,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(format_map(grid))
    print(f"map written to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "replay": _cmd_replay,
        "analyze": _cmd_analyze,
        "gen-map": _cmd_gen_map,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, MapFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendSetupError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ContractViolation, ReplayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
