"""Semantic novelty machinery: embedding, incremental PCA, neighbor search.

Signal token lists are feature-hashed into 768-dim vectors, reduced to 64
dims by a streaming PCA, and compared against a historical index by cosine
similarity.  Novelty of an execution is one minus the cosine to its nearest
stored neighbor; executions scoring strictly above the threshold are treated
as behaviorally new even without coverage gain.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from semfuzz.errors import DuplicateId, InsufficientSamples
from semfuzz.signals import SignalTokens

EMBED_DIM = 768
REDUCED_DIM = 64
PCA_WARMUP_SAMPLES = 256
DEFAULT_TAU = 0.25


@dataclass(frozen=True)
class NoveltyConfig:
    tau: float = DEFAULT_TAU
    d_prime: int = REDUCED_DIM
    embedder: str = "builtin_hash"  # builtin_hash | remote

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0,1), got {self.tau}")


_token_slot_cache: dict[str, tuple[int, float]] = {}


def _token_slot(token: str) -> tuple[int, float]:
    slot = _token_slot_cache.get(token)
    if slot is None:
        digest = hashlib.blake2b(token.encode(), digest_size=8).digest()
        value = int.from_bytes(digest, "big")
        slot = (value % EMBED_DIM, 1.0 if value >> 63 else -1.0)
        _token_slot_cache[token] = slot
    return slot


def embed(tokens: SignalTokens | tuple[str, ...] | list[str]) -> np.ndarray:
    """Feature-hash tokens into a signed, L2-normalized 768-dim vector."""
    items = tokens.tokens if isinstance(tokens, SignalTokens) else tokens
    vec = np.zeros(EMBED_DIM)
    for token in items:
        idx, sign = _token_slot(token)
        vec[idx] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0:
        vec /= norm
    return vec


@dataclass
class PcaState:
    """Streaming PCA over 768-dim embeddings, tracking the top 64 components.

    ``total_ss`` accumulates the full centered sum of squares (Chan update)
    so retained variance can be computed without tracking all 768
    eigenvalues.
    """

    mean: np.ndarray = field(default_factory=lambda: np.zeros(EMBED_DIM))
    components: np.ndarray = field(default_factory=lambda: np.zeros((0, EMBED_DIM)))
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    samples_seen: int = 0
    total_ss: float = 0.0


@dataclass(frozen=True)
class ReducedEmbedding:
    vector: np.ndarray
    norm: float
    provisional: bool = False


def _fix_signs(components: np.ndarray) -> np.ndarray:
    if components.size == 0:
        return components
    pivot = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), pivot])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def pca_partial_fit(state: PcaState, batch: list[np.ndarray] | np.ndarray) -> PcaState:
    """Fold a batch of embeddings into the streaming PCA state (in place)."""
    X = np.asarray(batch, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    m = X.shape[0]
    n = state.samples_seen

    if n == 0:
        mean = X.mean(axis=0)
        Xc = X - mean
        _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
        k = min(REDUCED_DIM, len(svals))
        state.mean = mean
        state.components = _fix_signs(vt[:k])
        state.eigenvalues = (svals[:k] ** 2) / m
        state.samples_seen = m
        state.total_ss = float(np.sum(Xc * Xc))
        return state

    total = n + m
    batch_mean = X.mean(axis=0)
    Xc = X - batch_mean
    mean_shift = batch_mean - state.mean
    correction = math.sqrt(n * m / total) * mean_shift

    prev_svals = np.sqrt(state.eigenvalues * n)
    stacked = np.vstack([prev_svals[:, None] * state.components, Xc, correction[None, :]])
    _, svals, vt = np.linalg.svd(stacked, full_matrices=False)
    k = min(REDUCED_DIM, len(svals))

    state.mean = state.mean + (m / total) * mean_shift
    state.components = _fix_signs(vt[:k])
    state.eigenvalues = (svals[:k] ** 2) / total
    state.samples_seen = total
    state.total_ss += float(np.sum(Xc * Xc)) + (n * m / total) * float(mean_shift @ mean_shift)
    return state


def pca_transform(state: PcaState, e: np.ndarray, warmup: int = PCA_WARMUP_SAMPLES) -> ReducedEmbedding:
    """Project an embedding onto the learned subspace.

    Before ``warmup`` samples have been fitted the projection is meaningless,
    so the first 64 raw coordinates pass through, flagged provisional.
    """
    if state.samples_seen < warmup or state.components.shape[0] < REDUCED_DIM:
        vec = np.array(e[:REDUCED_DIM], dtype=float)
        if vec.shape[0] < REDUCED_DIM:
            vec = np.pad(vec, (0, REDUCED_DIM - vec.shape[0]))
        return ReducedEmbedding(vector=vec, norm=float(np.linalg.norm(vec)), provisional=True)
    vec = state.components @ (np.asarray(e, dtype=float) - state.mean)
    return ReducedEmbedding(vector=vec, norm=float(np.linalg.norm(vec)), provisional=False)


def retained_variance(state: PcaState, d_prime: int) -> float:
    """Fraction of total variance captured by the top ``d_prime`` components."""
    if not 1 <= d_prime <= REDUCED_DIM:
        raise ValueError(f"d_prime must lie in [1, {REDUCED_DIM}], got {d_prime}")
    if state.samples_seen < 2:
        raise InsufficientSamples("need at least 2 fitted samples for a variance estimate")
    if d_prime > len(state.eigenvalues):
        raise InsufficientSamples(
            f"only {len(state.eigenvalues)} eigenvalues tracked, cannot report d_prime={d_prime}"
        )
    total_var = state.total_ss / state.samples_seen
    if total_var <= 1e-18:
        raise InsufficientSamples("total variance is zero (degenerate data)")
    fraction = float(np.sum(state.eigenvalues[:d_prime])) / total_var
    return min(max(fraction, 0.0), 1.0)


class NoveltyIndex:
    """Exact cosine nearest-neighbor index over reduced embeddings.

    Backed by a capacity-doubling matrix so queries are a single matvec.
    Exactness is the contract here; the interface leaves room for an
    approximate backend later.
    """

    def __init__(self, dim: int = REDUCED_DIM, capacity: int = 1024):
        self._dim = dim
        self._ids: list[str] = []
        self._id_set: set[str] = set()
        self._matrix = np.zeros((capacity, dim))
        self._norms = np.zeros(capacity)

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._id_set

    def insert(self, entry_id: str, reduced: ReducedEmbedding) -> None:
        if entry_id in self._id_set:
            raise DuplicateId(f"id {entry_id!r} already present in novelty index")
        n = len(self._ids)
        if n == self._matrix.shape[0]:
            self._matrix = np.vstack([self._matrix, np.zeros_like(self._matrix)])
            self._norms = np.concatenate([self._norms, np.zeros_like(self._norms)])
        self._matrix[n] = reduced.vector
        self._norms[n] = reduced.norm
        self._ids.append(entry_id)
        self._id_set.add(entry_id)

    def replace_all(self, entries: list[tuple[str, ReducedEmbedding]]) -> None:
        """Rebuild the index contents wholesale (used after a basis refit)."""
        self._ids = []
        self._id_set = set()
        capacity = max(1024, len(entries))
        self._matrix = np.zeros((capacity, self._dim))
        self._norms = np.zeros(capacity)
        for entry_id, reduced in entries:
            self.insert(entry_id, reduced)

    def cosines(self, query: ReducedEmbedding) -> np.ndarray:
        n = len(self._ids)
        if n == 0:
            return np.zeros(0)
        dots = self._matrix[:n] @ query.vector
        denom = self._norms[:n] * query.norm
        out = np.zeros(n)
        np.divide(dots, denom, out=out, where=denom > 0)
        return out

    def nearest(self, query: ReducedEmbedding) -> tuple[str, float] | None:
        """The stored entry maximizing cosine; ties break to the smallest id."""
        if not self._ids:
            return None
        cos = self.cosines(query)
        best = float(np.max(cos))
        tied = [self._ids[i] for i in np.flatnonzero(cos == best)]
        return (min(tied), best)


def nearest(index: NoveltyIndex, query: ReducedEmbedding) -> tuple[str, float] | None:
    return index.nearest(query)


def index_insert(index: NoveltyIndex, entry_id: str, reduced: ReducedEmbedding) -> None:
    index.insert(entry_id, reduced)


def novelty(query: ReducedEmbedding, index: NoveltyIndex) -> float:
    """1 - cos(query, nearest neighbor), clamped to [0, 1].

    An empty index or a zero-norm query scores 1.0: behavior with no
    precedent (or no signal at all) is maximally novel by convention.
    """
    if len(index) == 0 or query.norm == 0.0:
        return 1.0
    _, cos = index.nearest(query)
    return min(max(1.0 - cos, 0.0), 1.0)


def is_novel(score: float, config: NoveltyConfig) -> bool:
    """Strict threshold gate: only scores above tau count as novel."""
    return score > config.tau


def mean_pairwise_novelty(window: list[ReducedEmbedding] | list[np.ndarray]) -> float:
    """Mean over all unordered pairs of clamp(1 - cosine, 0, 1).

    Windows of fewer than two elements score 0 by convention.
    """
    vecs = [w.vector if isinstance(w, ReducedEmbedding) else np.asarray(w, dtype=float) for w in window]
    n = len(vecs)
    if n < 2:
        return 0.0
    M = np.vstack(vecs)
    norms = np.linalg.norm(M, axis=1)
    dots = M @ M.T
    denom = np.outer(norms, norms)
    cos = np.zeros_like(dots)
    np.divide(dots, denom, out=cos, where=denom > 0)
    nov = np.clip(1.0 - cos, 0.0, 1.0)
    iu = np.triu_indices(n, k=1)
    return float(np.mean(nov[iu]))
