"""Cross-episode memory: per-episode mean reflection vectors with cosine retrieval.

At the end of each episode the mean of all reflection embeddings becomes one
pool entry. At the start of the next episode the pool is queried with the
embedding of the serialized environment state, and the best matches are
rendered into a short prompt fragment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class EpisodicEntry:
    episode_id: int
    vector: np.ndarray
    total_shared_reward: float
    step_count: int

    def __post_init__(self):
        if self.step_count < 1:
            raise ValueError("step_count must be at least 1")
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=float))


@dataclass
class MemoryPool:
    """Append-only within a run; ``capacity`` None means unbounded (the default).

    With a capacity set, the oldest entry is evicted to admit a new one.
    """

    entries: list[EpisodicEntry] = field(default_factory=list)
    capacity: int | None = None

    def __post_init__(self):
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be at least 1 when set")

    def append(self, entry: EpisodicEntry) -> None:
        if self.entries:
            if entry.episode_id <= self.entries[-1].episode_id:
                raise ValueError("episode ids must be strictly increasing")
            if entry.vector.shape != self.entries[-1].vector.shape:
                raise ValueError("pool entries must share one dimension")
        self.entries.append(entry)
        if self.capacity is not None and len(self.entries) > self.capacity:
            del self.entries[0]

    def __len__(self) -> int:
        return len(self.entries)


def episodic_vector(reflections: Sequence[np.ndarray]) -> np.ndarray:
    """Componentwise arithmetic mean of an episode's reflection embeddings."""
    if len(reflections) == 0:
        raise ValueError("cannot average an empty reflection list")
    mat = np.stack([np.asarray(r, dtype=float) for r in reflections])
    return mat.mean(axis=0)


@dataclass(frozen=True)
class RetrievedMemory:
    entry: EpisodicEntry
    similarity: float


def _safe_cosine(u: np.ndarray, v: np.ndarray) -> float:
    # Retrieval must stay total: a zero-norm vector scores 0 instead of erroring.
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def retrieve(pool: MemoryPool, query: np.ndarray, k: int) -> list[RetrievedMemory]:
    """Top-k entries by cosine similarity, descending; ties go to the newer episode."""
    if k < 1:
        raise ValueError("k must be at least 1")
    query = np.asarray(query, dtype=float)
    if pool.entries and query.shape != pool.entries[0].vector.shape:
        raise ValueError(
            f"query dimension {query.shape} does not match pool dimension "
            f"{pool.entries[0].vector.shape}"
        )
    scored = [RetrievedMemory(e, _safe_cosine(query, e.vector)) for e in pool.entries]
    scored.sort(key=lambda m: (-m.similarity, -m.entry.episode_id))
    return scored[:k]


def bias_text(memories: Sequence[RetrievedMemory]) -> str:
    """Deterministic one-line-per-entry prompt fragment; empty input yields ''."""
    if not memories:
        return ""
    lines = [
        f"episode {m.entry.episode_id} (shared reward {m.entry.total_shared_reward:.2f}, "
        f"similarity {m.similarity:.3f})"
        for m in memories
    ]
    return "Relevant past episodes: " + "; ".join(lines) + "."


def save_pool(pool: MemoryPool, index_path, vector_path) -> None:
    """Line-delimited index plus a sidecar little-endian float64 vector blob."""
    with open(vector_path, "wb") as vec_fh:
        offsets = []
        for entry in pool.entries:
            offsets.append(vec_fh.tell())
            vec_fh.write(entry.vector.astype("<f8").tobytes(order="C"))
    with open(index_path, "w", encoding="utf-8") as idx_fh:
        for entry, off in zip(pool.entries, offsets):
            idx_fh.write(
                json.dumps(
                    {
                        "episode_id": entry.episode_id,
                        "step_count": entry.step_count,
                        "total_shared_reward": entry.total_shared_reward,
                        "vector_file_offset": off,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_pool(index_path, vector_path, dim: int) -> MemoryPool:
    with open(vector_path, "rb") as vec_fh:
        blob = vec_fh.read()
    pool = MemoryPool()
    with open(index_path, "r", encoding="utf-8") as idx_fh:
        for lineno, line in enumerate(idx_fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                off = rec["vector_file_offset"]
                raw = blob[off : off + 8 * dim]
                if len(raw) != 8 * dim:
                    raise ValueError("vector blob truncated")
                vector = np.frombuffer(raw, dtype="<f8").copy()
                pool.append(
                    EpisodicEntry(
                        episode_id=rec["episode_id"],
                        vector=vector,
                        total_shared_reward=rec["total_shared_reward"],
                        step_count=rec["step_count"],
                    )
                )
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{index_path}: record {lineno} is corrupt: {exc}") from exc
    return pool
