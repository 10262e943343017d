"""External latent strategy vectors, their reflection-driven updates, and the style decoder.

Each agent owns a D-dimensional vector z encoding its persuasion style. After
every round the agent's reflection embedding e pulls z toward (or, for negative
rewards, away from) itself:

    z' = z + eta * tanh(reward) * (e - z)

so ``norm(z' - e) = (1 - eta * tanh(reward)) * norm(z - e)`` exactly. The style
decoder is pure retrieval: it ranks a fixed codebook of phrases by cosine
similarity to z.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Sequence

import numpy as np


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Standard cosine similarity; raises on zero vectors or shape mismatch."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    return float(np.dot(u, v) / (nu * nv))


@dataclass(frozen=True)
class LatentVector:
    """Snapshot of an agent's strategy vector after ``step_index`` updates."""

    values: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1:
            raise ValueError("latent vector must be one-dimensional")
        if not np.isfinite(arr).all():
            raise ValueError("latent vector components must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def init_latent(dim: int, rng: np.random.Generator) -> LatentVector:
    """Seeded random unit vector; never zero, so cosine-to-first is defined at step 0."""
    if dim < 1:
        raise ValueError("dim must be positive")
    v = rng.standard_normal(dim)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:  # astronomically unlikely; retry deterministically
        v = np.ones(dim)
        norm = float(np.linalg.norm(v))
    return LatentVector(values=v / norm, step_index=0)


def latent_update(z: LatentVector, e: np.ndarray, reward: float, eta: float) -> LatentVector:
    """Pull z toward the reflection embedding, gated by tanh of the reward."""
    e = np.asarray(e, dtype=float)
    if e.shape != z.values.shape:
        raise ValueError(f"dimension mismatch: embedding {e.shape} vs latent {z.values.shape}")
    if not np.isfinite(e).all():
        raise ValueError("embedding components must be finite")
    if not (math.isfinite(reward) and math.isfinite(eta)):
        raise ValueError("reward and eta must be finite")
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    gate = math.tanh(reward)
    values = z.values + eta * gate * (e - z.values)
    return LatentVector(values=values, step_index=z.step_index + 1)


@dataclass(frozen=True)
class StyleCodebook:
    """Fixed phrase inventory with unit anchor vectors."""

    phrases: tuple[str, ...]
    anchors: np.ndarray  # shape (len(phrases), D), rows unit-normalized

    def __post_init__(self):
        if len(self.phrases) != len(set(self.phrases)):
            raise ValueError("codebook phrases must be unique")
        if self.anchors.shape[0] != len(self.phrases):
            raise ValueError("one anchor per phrase required")

    def __len__(self) -> int:
        return len(self.phrases)

    @classmethod
    def from_phrases(
        cls, phrases: Sequence[str], embed: Callable[[str], np.ndarray]
    ) -> "StyleCodebook":
        anchors = []
        for phrase in phrases:
            vec = np.asarray(embed(phrase), dtype=float)
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise ValueError(f"embedding of {phrase!r} is the zero vector")
            anchors.append(vec / norm)
        return cls(phrases=tuple(phrases), anchors=np.stack(anchors))


def default_phrases() -> list[str]:
    """The 16 stock persuasion phrases shipped with the package."""
    text = resources.files("gridcouncil").joinpath("data/style_phrases.txt").read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


@dataclass(frozen=True)
class StyleDecodeResult:
    phrases: tuple[str, ...]
    fallback: bool  # True when z was zero and codebook order was used


def style_decode(z: LatentVector, codebook: StyleCodebook, k: int) -> StyleDecodeResult:
    """Top-k codebook phrases by cosine to z; deterministic, ties by codebook order."""
    if len(codebook) == 0:
        raise ValueError("codebook must be nonempty")
    if not (1 <= k <= len(codebook)):
        raise ValueError(f"k must lie in [1, {len(codebook)}], got {k}")
    if codebook.anchors.shape[1] != z.dim:
        raise ValueError("codebook anchor dimension does not match latent dimension")
    znorm = float(np.linalg.norm(z.values))
    if znorm == 0.0:
        return StyleDecodeResult(phrases=codebook.phrases[:k], fallback=True)
    scores = codebook.anchors @ (z.values / znorm)
    order = sorted(range(len(codebook)), key=lambda i: (-scores[i], i))
    return StyleDecodeResult(
        phrases=tuple(codebook.phrases[i] for i in order[:k]), fallback=False
    )


@dataclass
class LatentTrajectory:
    """Ordered latent snapshots: the initial vector at step 0, then one per reflection."""

    agent: str
    snapshots: list[LatentVector]

    def append(self, z: LatentVector) -> None:
        if self.snapshots and z.step_index <= self.snapshots[-1].step_index:
            raise ValueError("snapshot step indices must be strictly increasing")
        self.snapshots.append(z)

    def __len__(self) -> int:
        return len(self.snapshots)


def export_trajectory_csv(traj: LatentTrajectory, path, max_components: int = 64) -> None:
    """Truncated desk-inspection CSV: agent, step, first min(D, max) components."""
    if not traj.snapshots:
        raise ValueError("cannot export an empty trajectory")
    ncomp = min(traj.snapshots[0].dim, max_components)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["agent", "step", *[f"component_{i}" for i in range(ncomp)]])
        for snap in traj.snapshots:
            writer.writerow([traj.agent, snap.step_index, *[repr(float(v)) for v in snap.values[:ncomp]]])


def export_trajectory_binary(traj: LatentTrajectory, path) -> None:
    """Full dump: little-endian float64, row-major (one row per snapshot)."""
    mat = np.stack([snap.values for snap in traj.snapshots]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(mat.tobytes(order="C"))


def load_trajectory_binary(path, dim: int, agent: str = "") -> LatentTrajectory:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % (8 * dim) != 0:
        raise ValueError(f"{path}: byte length {len(raw)} is not a multiple of 8*{dim}")
    mat = np.frombuffer(raw, dtype="<f8").reshape(-1, dim)
    snaps = [LatentVector(values=row.copy(), step_index=i) for i, row in enumerate(mat)]
    return LatentTrajectory(agent=agent, snapshots=snaps)
