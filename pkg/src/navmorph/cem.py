"""Contextual evolution memory.

A fixed-capacity bank of context vectors.  A query ``h`` retrieves its top-K
entries by cosine similarity, is blended with their weighted mean, and the
retrieved entries are then pulled toward the (pre-blend) query.  Nothing here
touches the autodiff tape: the bank is updated by plain forward arithmetic.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from navmorph.errors import ConfigError, DimensionError, DomainError, FormatError

log = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "cem-v1"
_UNIFORM_FALLBACK = 1e-12


@dataclass
class MemoryBank:
    entries: np.ndarray
    k: int
    alpha: float
    beta: float
    frozen: bool = False
    evolve_calls: int = 0
    skipped_evolutions: int = 0

    def __post_init__(self):
        self.entries = np.array(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise DimensionError("memory entries must form an (N_m, d_v) matrix")
        if not 1 <= self.k <= self.n_m:
            raise ConfigError(f"need 1 <= K <= N_m, got K={self.k}, N_m={self.n_m}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")

    @property
    def n_m(self) -> int:
        return self.entries.shape[0]

    @property
    def d_v(self) -> int:
        return self.entries.shape[1]

    def copy(self, frozen: bool | None = None) -> "MemoryBank":
        return MemoryBank(
            self.entries.copy(), self.k, self.alpha, self.beta,
            self.frozen if frozen is None else frozen,
        )


@dataclass
class RetrievalResult:
    indices: np.ndarray
    weights: np.ndarray
    raw_sims: np.ndarray


def init_random(n_m: int, d_v: int, rng: np.random.Generator, k: int = 16,
                alpha: float = 0.7, beta: float = 0.7) -> MemoryBank:
    """Entries drawn i.i.d. from N(0, 1/d_v)."""
    if k > n_m:
        raise ConfigError(f"K={k} exceeds memory size N_m={n_m}")
    entries = rng.standard_normal((n_m, d_v)) / math.sqrt(d_v)
    return MemoryBank(entries, k, alpha, beta)


def cosine_similarities(bank: MemoryBank, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (bank.d_v,):
        raise DimensionError(f"query shape {h.shape} does not match d_v={bank.d_v}")
    h_norm = math.sqrt((h * h).sum())
    if h_norm == 0.0:
        raise DomainError("cannot retrieve with a zero-norm query")
    v = bank.entries
    v_norm = np.sqrt((v * v).sum(axis=1))
    dots = (v * h).sum(axis=1)
    sims = np.full(bank.n_m, -1.0)
    ok = v_norm > 0.0
    sims[ok] = dots[ok] / (v_norm[ok] * h_norm)
    return sims


def normalize_scores(sims) -> np.ndarray:
    """Shift by min(0, min sim) and divide by the sum; uniform if the sum vanishes."""
    sims = [float(s) for s in sims]
    shift = min(0.0, min(sims))
    shifted = [s - shift for s in sims]
    total = math.fsum(shifted)
    if total < _UNIFORM_FALLBACK:
        return np.full(len(sims), 1.0 / len(sims))
    return np.array([s / total for s in shifted])


def retrieve_topk(bank: MemoryBank, h) -> RetrievalResult:
    """Top-K entries by cosine similarity, ties broken by ascending index."""
    sims = cosine_similarities(bank, h)
    order = np.lexsort((np.arange(bank.n_m), -sims))[: bank.k]
    top = sims[order]
    return RetrievalResult(order, normalize_scores(top), top)


def context_vector(bank: MemoryBank, retrieval: RetrievalResult) -> np.ndarray:
    """Weighted sum of the retrieved entries."""
    return retrieval.weights @ bank.entries[retrieval.indices]


def enhance(h, retrieval: RetrievalResult, bank: MemoryBank) -> np.ndarray:
    """``(1 - alpha) h + alpha * sum_k w_k v_k``; does not modify the bank."""
    h = np.asarray(h, dtype=np.float64)
    if bank.alpha == 0.0:
        return h.copy()
    return (1.0 - bank.alpha) * h + bank.alpha * context_vector(bank, retrieval)


def evolve(bank: MemoryBank, retrieval: RetrievalResult, h) -> MemoryBank:
    """Pull each retrieved entry toward ``h``: ``v <- (1 - beta) v + beta h``.

    ``h`` must be the query *before* enhancement.  A frozen bank is left
    untouched and the skip is counted.
    """
    if bank.frozen:
        bank.skipped_evolutions += 1
        if bank.skipped_evolutions == 1:
            log.warning("evolve called on a frozen memory bank; ignoring")
        return bank
    bank.evolve_calls += 1
    if bank.beta == 0.0:
        return bank
    h = np.asarray(h, dtype=np.float64)
    idx = retrieval.indices
    bank.entries[idx] = (1.0 - bank.beta) * bank.entries[idx] + bank.beta * h
    return bank


def enhance_and_evolve(bank: MemoryBank, h) -> tuple[np.ndarray, MemoryBank]:
    """Retrieve once, blend, then update the retrieved entries with the
    pre-blend ``h``."""
    h = np.asarray(h, dtype=np.float64)
    retrieval = retrieve_topk(bank, h)
    h_tilde = enhance(h, retrieval, bank)
    evolve(bank, retrieval, h)
    return h_tilde, bank


def dumps(bank: MemoryBank) -> str:
    doc = {
        "format": SNAPSHOT_FORMAT,
        "n_m": bank.n_m,
        "d_v": bank.d_v,
        "k": bank.k,
        "alpha": bank.alpha,
        "beta": bank.beta,
        "entries": bank.entries.tolist(),
    }
    return json.dumps(doc) + "\n"


def loads(text: str, k: int | None = None) -> MemoryBank:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"malformed memory snapshot at line {exc.lineno}, column {exc.colno} "
            f"(offset {exc.pos}): {exc.msg}"
        ) from exc
    if not isinstance(doc, dict) or doc.get("format") != SNAPSHOT_FORMAT:
        raise FormatError(f"not a {SNAPSHOT_FORMAT} snapshot")
    try:
        entries = np.asarray(doc["entries"], dtype=np.float64)
        n_m, d_v = int(doc["n_m"]), int(doc["d_v"])
        alpha, beta = float(doc["alpha"]), float(doc["beta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"memory snapshot field error: {exc}") from exc
    if entries.shape != (n_m, d_v):
        raise FormatError(f"entries have shape {entries.shape}, header says ({n_m}, {d_v})")
    if k is None:
        k = int(doc.get("k", min(16, n_m)))
    return MemoryBank(entries, min(k, n_m), alpha, beta)


def save(bank: MemoryBank, path) -> None:
    from navmorph.io import atomic_write_text

    atomic_write_text(path, dumps(bank))


def load(path, k: int | None = None) -> MemoryBank:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), k=k)
