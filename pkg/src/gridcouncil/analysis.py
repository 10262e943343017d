"""Measurement pipeline over latent trajectories and adoption logs.

Produces, per run: cosine-to-first and consecutive-L2 series with spike
detection, a 2D principal-component projection of the latent snapshots, and
per-advisor adoption counts. Everything here is a pure function over immutable
inputs; CSV/JSON emission lives at the bottom.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .language_loop import LatentTrajectory, cosine
from .meta_controller import AdoptionLog
from .personas import PERSONA_ORDER, PersonaKind

SPIKE_THRESHOLD_DEFAULT = 0.6

_POWER_TOL = 1e-10
_POWER_MAX_ITER = 10_000
# Fixed seed for the power-iteration start vector; part of the deterministic contract.
_POWER_SEED = 0x5CA1AB1E


@dataclass(frozen=True)
class SeriesReport:
    metric: str
    series: dict[str, list[tuple[int, float]]]  # agent name -> (step, value)


@dataclass(frozen=True)
class SpikeReport:
    threshold: float
    spikes: dict[str, list[int]]  # agent name -> spiking step indices


@dataclass(frozen=True)
class Pca2dResult:
    scores: np.ndarray  # shape (N, 2)
    explained_variance: tuple[float, float]
    explained_variance_ratio: tuple[float, float]
    components: np.ndarray  # shape (2, D), sign-fixed


def cosine_to_first(traj: LatentTrajectory) -> list[tuple[int, float]]:
    """cos(z_t, z_0) for each snapshot; exactly 1.0 at step 0 by construction."""
    if len(traj) < 1:
        raise ValueError("trajectory must hold at least one snapshot")
    first = traj.snapshots[0].values
    if float(np.linalg.norm(first)) == 0.0:
        raise ValueError("initial latent vector must be nonzero")
    series = [(traj.snapshots[0].step_index, 1.0)]
    series.extend(
        (snap.step_index, cosine(snap.values, first)) for snap in traj.snapshots[1:]
    )
    return series


def l2_deltas(traj: LatentTrajectory) -> list[tuple[int, float]]:
    """norm(z_t - z_{t-1}) for t >= 1; empty for trajectories shorter than 2."""
    out: list[tuple[int, float]] = []
    for prev, cur in zip(traj.snapshots, traj.snapshots[1:]):
        out.append((cur.step_index, float(np.linalg.norm(cur.values - prev.values))))
    return out


def detect_spikes(
    deltas: Sequence[tuple[int, float]], threshold: float = SPIKE_THRESHOLD_DEFAULT
) -> list[int]:
    """Steps whose L2 delta strictly exceeds the threshold."""
    return [step for step, value in deltas if value > threshold]


def _power_iteration(mat: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Leading eigenpair of a symmetric PSD matrix; deterministic start vector."""
    n = mat.shape[0]
    w = rng.standard_normal(n)
    w /= np.linalg.norm(w)
    for _ in range(_POWER_MAX_ITER):
        nxt = mat @ w
        norm = float(np.linalg.norm(nxt))
        if norm < 1e-300:
            return w, 0.0  # matrix is (numerically) zero on this subspace
        nxt /= norm
        if nxt @ w < 0:
            nxt = -nxt
        if float(np.linalg.norm(nxt - w)) < _POWER_TOL:
            w = nxt
            break
        w = nxt
    eig = float(w @ (mat @ w))
    return w, max(eig, 0.0)


def pca2d(points: Sequence[np.ndarray] | np.ndarray) -> Pca2dResult:
    """Top-2 principal projection via power iteration with deflation.

    Works on the N x N Gram matrix when N <= D (the usual case here, where a
    few dozen snapshots live in thousands of dimensions) and on the D x D
    scatter matrix otherwise.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise ValueError("points must form a 2D array")
    n, d = X.shape
    if n < 3:
        raise ValueError("need at least 3 points")
    Xc = X - X.mean(axis=0)
    total_scatter = float((Xc**2).sum())
    if total_scatter == 0.0:
        raise ValueError("degenerate input: all points are identical")
    rng = np.random.default_rng(_POWER_SEED)

    directions: list[np.ndarray] = []
    eigenvalues: list[float] = []
    if n <= d:
        gram = Xc @ Xc.T
        work = gram.copy()
        for _ in range(2):
            u, lam = _power_iteration(work, rng)
            if lam <= 0.0:
                directions.append(np.zeros(d))
                eigenvalues.append(0.0)
            else:
                v = Xc.T @ u
                vnorm = float(np.linalg.norm(v))
                directions.append(v / vnorm if vnorm > 0 else np.zeros(d))
                eigenvalues.append(lam)
                work = work - lam * np.outer(u, u)
    else:
        scatter = Xc.T @ Xc
        work = scatter.copy()
        for _ in range(2):
            v, lam = _power_iteration(work, rng)
            if lam <= 0.0:
                directions.append(np.zeros(d))
                eigenvalues.append(0.0)
            else:
                directions.append(v)
                eigenvalues.append(lam)
                work = work - lam * np.outer(v, v)

    # Sign convention: the largest-magnitude component of each direction is positive.
    for i, v in enumerate(directions):
        if float(np.linalg.norm(v)) == 0.0:
            continue
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            directions[i] = -v

    scores = np.stack([Xc @ v if np.linalg.norm(v) > 0 else np.zeros(n) for v in directions], axis=1)
    denom = n - 1
    ev = (eigenvalues[0] / denom, eigenvalues[1] / denom)
    total_var = total_scatter / denom
    ratio = (ev[0] / total_var, ev[1] / total_var)
    return Pca2dResult(
        scores=scores,
        explained_variance=ev,
        explained_variance_ratio=ratio,
        components=np.stack(directions),
    )


def adoption_counts(log: AdoptionLog) -> dict[PersonaKind, int]:
    """Exact per-advisor adoption multiset counts; zeros for never-adopted advisors."""
    return log.counts()


# ---------------------------------------------------------------------------
# Report assembly and file emission
# ---------------------------------------------------------------------------


def build_series_report(
    trajectories: dict[PersonaKind, LatentTrajectory], metric: str
) -> SeriesReport:
    series: dict[str, list[tuple[int, float]]] = {}
    for kind in PERSONA_ORDER:
        traj = trajectories[kind]
        series[kind.value] = cosine_to_first(traj) if metric == "cosine_to_first" else l2_deltas(traj)
    return SeriesReport(metric=metric, series=series)


def build_spike_report(
    trajectories: dict[PersonaKind, LatentTrajectory], threshold: float
) -> SpikeReport:
    spikes = {
        kind.value: detect_spikes(l2_deltas(trajectories[kind]), threshold)
        for kind in PERSONA_ORDER
    }
    return SpikeReport(threshold=threshold, spikes=spikes)


def write_series_csv(report: SeriesReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "step", "value"])
        for kind in PERSONA_ORDER:
            for step, value in report.series[kind.value]:
                writer.writerow([kind.value, step, repr(value)])


def write_spikes_csv(report: SpikeReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "step"])
        for kind in PERSONA_ORDER:
            for step in report.spikes[kind.value]:
                writer.writerow([kind.value, step])


def write_adoption_counts_csv(counts: dict[PersonaKind, int], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "count"])
        for kind in PERSONA_ORDER:
            writer.writerow([kind.value, counts[kind]])


def write_pca_csv(
    rows: list[tuple[str, int, float, float]], path
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "step", "pc1", "pc2"])
        for agent, step, pc1, pc2 in rows:
            writer.writerow([agent, step, repr(pc1), repr(pc2)])


def run_analysis(
    trajectories: dict[PersonaKind, LatentTrajectory],
    log: AdoptionLog,
    out_dir,
    run_id: str,
    spike_threshold: float = SPIKE_THRESHOLD_DEFAULT,
) -> dict:
    """Emit every metric CSV plus the combined JSON report; returns the report dict."""
    from pathlib import Path

    out = Path(out_dir)
    cos_report = build_series_report(trajectories, "cosine_to_first")
    l2_report = build_series_report(trajectories, "l2_delta")
    spike_report = build_spike_report(trajectories, spike_threshold)
    counts = adoption_counts(log)

    write_series_csv(cos_report, out / f"{run_id}_cosine_to_first.csv")
    write_series_csv(l2_report, out / f"{run_id}_l2_delta.csv")
    write_spikes_csv(spike_report, out / f"{run_id}_spikes.csv")
    write_adoption_counts_csv(counts, out / f"{run_id}_adoption_counts.csv")

    # Joint PCA across all agents' snapshots (one shared plane), plus per-agent fits.
    joint_points = []
    joint_labels: list[tuple[str, int]] = []
    for kind in PERSONA_ORDER:
        for snap in trajectories[kind].snapshots:
            joint_points.append(snap.values)
            joint_labels.append((kind.value, snap.step_index))
    joint = pca2d(np.stack(joint_points))
    joint_rows = [
        (agent, step, float(joint.scores[i, 0]), float(joint.scores[i, 1]))
        for i, (agent, step) in enumerate(joint_labels)
    ]
    write_pca_csv(joint_rows, out / f"{run_id}_pca2d.csv")

    per_agent_rows: list[tuple[str, int, float, float]] = []
    per_agent_variance: dict[str, list[float]] = {}
    for kind in PERSONA_ORDER:
        traj = trajectories[kind]
        fit = pca2d(np.stack([snap.values for snap in traj.snapshots]))
        per_agent_variance[kind.value] = [fit.explained_variance[0], fit.explained_variance[1]]
        for i, snap in enumerate(traj.snapshots):
            per_agent_rows.append(
                (kind.value, snap.step_index, float(fit.scores[i, 0]), float(fit.scores[i, 1]))
            )
    write_pca_csv(per_agent_rows, out / f"{run_id}_pca2d_per_agent.csv")

    report = {
        "run_id": run_id,
        "adoption_counts": {kind.value: counts[kind] for kind in PERSONA_ORDER},
        "decision_steps": len(log),
        "spike_threshold": spike_threshold,
        "spikes": spike_report.spikes,
        "pca_joint_explained_variance": list(joint.explained_variance),
        "pca_joint_explained_variance_ratio": list(joint.explained_variance_ratio),
        "pca_per_agent_explained_variance": per_agent_variance,
        "trajectory_lengths": {
            kind.value: len(trajectories[kind]) for kind in PERSONA_ORDER
        },
    }
    with open(out / f"{run_id}_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return report
