"""Training objectives for the world model and the imitation policy.

Log-likelihood terms use unit-variance Gaussians, so they reduce to squared
errors once constants are dropped.  The NDTW regularizer aligns sequences
with dynamic time warping; the alignment path is a discrete argmin, so it is
recomputed on every forward pass and held fixed while differentiating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from navmorph.errors import DomainError, UsageError
from navmorph.numcore import Tensor, stack
from navmorph.rssm import GaussianParams

Path = list[tuple[int, int]]


@dataclass
class LossConfig:
    gamma: float = 1e-3
    ndtw_scale: float = 0.5
    l2_weight: float = 1.0
    # Divide the regularizer's double sum by the number of terms (True) or
    # only by the horizon, as the formula is literally written (False).
    normalized_regularizer: bool = True
    use_regularizer: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise UsageError(f"gamma must be >= 0, got {self.gamma}")
        if not self.ndtw_scale > 0 or not self.l2_weight > 0:
            raise UsageError("ndtw_scale and l2_weight must be positive")


@dataclass
class LossReport:
    l_re: float
    l_ac: float
    l_kl: float
    l_il: float
    total: float
    gamma: float
    total_tensor: Tensor | None = None
    per_step: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        return {"l_re": self.l_re, "l_ac": self.l_ac, "l_kl": self.l_kl,
                "l_il": self.l_il, "total": self.total}


# -- Gaussian terms --------------------------------------------------------

def kl_diag_gaussian(q: GaussianParams, p: GaussianParams) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over dimensions."""
    if np.any(q.sigma.data <= 0) or np.any(p.sigma.data <= 0):
        raise DomainError("kl_diag_gaussian: sigma must be strictly positive")
    var_q = q.sigma.square()
    var_p = p.sigma.square()
    diff = q.mu - p.mu
    terms = (p.sigma / q.sigma).log() + (var_q + diff.square()) / (var_p * 2.0) - 0.5
    return terms.sum()


def gaussian_nll(x, mean: Tensor, var) -> Tensor:
    """Full negative log-density of ``x`` under N(mean, var), summed over dims."""
    var_t = var if isinstance(var, Tensor) else Tensor(var)
    diff = mean - x
    return (var_t.log() * 0.5 + diff.square() / (var_t * 2.0) + 0.5 * math.log(2 * math.pi)).sum()


# -- dynamic time warping ---------------------------------------------------

@dataclass
class DTWResult:
    cost: float
    path: Path
    table: np.ndarray


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def _as_matrix(seq) -> np.ndarray:
    arr = np.asarray([np.asarray(getattr(x, "data", x), dtype=np.float64) for x in seq])
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def dtw_table(ref, pred) -> DTWResult:
    """O(n*m) DTW with Euclidean ground distance and steps (1,1), (1,0), (0,1).

    The backtrace follows the argmin predecessor, preferring the diagonal,
    then a step along ``ref``, then a step along ``pred``.
    """
    if len(ref) == 0 or len(pred) == 0:
        raise UsageError("dtw_table needs two nonempty sequences")
    a, b = _as_matrix(ref), _as_matrix(pred)
    d = pairwise_distances(a, b).tolist()
    n, m = len(d), len(d[0])
    inf = math.inf
    acc = [[inf] * m for _ in range(n)]
    for i in range(n):
        row, drow = acc[i], d[i]
        up = acc[i - 1] if i else None
        for j in range(m):
            if i == 0 and j == 0:
                best = 0.0
            else:
                best = inf
                if i and j:
                    best = up[j - 1]
                if i and up[j] < best:
                    best = up[j]
                if j and row[j - 1] < best:
                    best = row[j - 1]
            row[j] = drow[j] + best
    i, j = n - 1, m - 1
    path = [(i, j)]
    while i or j:
        if i and j:
            cand = [(acc[i - 1][j - 1], i - 1, j - 1), (acc[i - 1][j], i - 1, j),
                    (acc[i][j - 1], i, j - 1)]
        elif i:
            cand = [(acc[i - 1][j], i - 1, j)]
        else:
            cand = [(acc[i][j - 1], i, j - 1)]
        best = cand[0]
        for c in cand[1:]:
            if c[0] < best[0]:
                best = c
        _, i, j = best
        path.append((i, j))
    path.reverse()
    return DTWResult(acc[n - 1][m - 1], path, np.asarray(acc))


def ndtw(ref, pred, scale: float) -> float:
    """``exp(-DTW(ref, pred) / (len(ref) * scale))``, in (0, 1]."""
    if not scale > 0:
        raise DomainError(f"NDTW scale must be positive, got {scale}")
    return math.exp(-dtw_table(ref, pred).cost / (len(ref) * scale))


def _path_cost(ref: np.ndarray, known: np.ndarray, predicted: Sequence[Tensor],
               path: Path) -> Tensor | float:
    """Sum of distances along ``path`` between ``ref`` rows and the spliced
    sequence ``known ++ predicted``; only the predicted part is differentiable."""
    n_known = len(known)
    const = 0.0
    ref_rows, pred_rows = [], []
    for i, k in path:
        if k < n_known:
            diff = ref[i] - known[k]
            const += math.sqrt(float((diff * diff).sum()))
        else:
            ref_rows.append(i)
            pred_rows.append(k - n_known)
    if not pred_rows:
        return const
    stacked = stack(list(predicted))
    diffs = stacked[np.asarray(pred_rows)] - ref[np.asarray(ref_rows)]
    return diffs.norm(axis=-1).sum() + const


def spliced_ndtw(ref: np.ndarray, known: np.ndarray, predicted: Sequence[Tensor],
                 scale: float, path: Path | None = None) -> tuple[Tensor, Path]:
    """Differentiable NDTW between ``ref`` and ``known ++ predicted``.

    The alignment is computed from current values unless ``path`` is given.
    """
    if path is None:
        seq = list(known) + [p.data for p in predicted]
        path = dtw_table(ref, seq).path
    cost = _path_cost(ref, known, predicted, path)
    if not isinstance(cost, Tensor):
        cost = Tensor(cost)
    return (cost * (-1.0 / (len(ref) * scale))).exp(), path


def ndtw_regularizer(truth, predictions: Sequence[Sequence[Tensor]], scale: float,
                     normalized: bool = True,
                     paths: dict | None = None) -> tuple[Tensor, dict]:
    """``1 - (1/Z) * sum_t sum_j NDTW(truth[:t+j+1], truth[:t+1] ++ pred[t][:j])``.

    ``predictions[t]`` holds the elements forecast after step ``t`` (for
    indices ``t+1, t+2, ...``).  Forecasts reaching past the end of ``truth``
    are dropped.  ``Z`` is the number of evaluated terms when ``normalized``,
    else the horizon.  Returns the loss and the alignment paths, keyed by
    ``(t, j)``, which can be passed back to freeze the alignment.
    """
    truth = _as_matrix(truth)
    paths = {} if paths is None else paths
    used = {}
    total = None
    count = 0
    horizon = max((len(p) for p in predictions), default=0)
    for t, preds in enumerate(predictions):
        for j in range(1, len(preds) + 1):
            end = t + j + 1
            if end > len(truth):
                break
            val, path = spliced_ndtw(truth[:end], truth[: t + 1], preds[:j], scale,
                                     paths.get((t, j)))
            used[(t, j)] = path
            total = val if total is None else total + val
            count += 1
    if total is None:
        return Tensor(0.0), used
    denom = count if normalized else horizon
    return 1.0 - total * (1.0 / denom), used


# -- loss assembly -----------------------------------------------------------

def _sq(t: Tensor, target) -> Tensor:
    return (t - target).square().sum()


def mean_pairwise_distance(seq) -> float:
    x = _as_matrix(seq)
    if len(x) < 2:
        return 1.0
    d = pairwise_distances(x, x)
    m = float(d[np.triu_indices(len(x), 1)].mean())
    return m if m > 1e-6 else 1.0


def reconstruction_loss(true_x, decoded: Sequence[Tensor],
                        rollout_embeddings: Sequence[Sequence[Tensor]], cfg: LossConfig,
                        scale: float | None = None,
                        paths: dict | None = None) -> tuple[Tensor, dict]:
    """Mean squared error over observed and forecast embeddings plus the NDTW
    regularizer over embedding trajectories."""
    true_x = _as_matrix(true_x)
    if len(decoded) != len(true_x):
        raise UsageError("decoded and true embeddings differ in length")
    dim = true_x.shape[1]
    terms = [_sq(x_hat, true_x[t]) for t, x_hat in enumerate(decoded)]
    for t, preds in enumerate(rollout_embeddings):
        for j, x_hat in enumerate(preds, start=1):
            if t + j < len(true_x):
                terms.append(_sq(x_hat, true_x[t + j]))
    mse = stack(terms).sum() * (1.0 / (len(terms) * dim))
    if not cfg.use_regularizer:
        return mse, {}
    scale = mean_pairwise_distance(true_x) if scale is None else scale
    reg, used = ndtw_regularizer(true_x, rollout_embeddings, scale,
                                 cfg.normalized_regularizer, paths)
    return mse + reg, used


def action_loss(teacher_actions, policy_actions: Sequence[Tensor],
                rollout_actions: Sequence[Sequence[Tensor]], positions,
                cfg: LossConfig, paths: dict | None = None) -> tuple[Tensor, dict]:
    """Weighted mean squared displacement error against teacher actions plus
    the NDTW regularizer comparing visited positions with imagined ones.

    ``positions[t]`` is the position before step ``t``; the imagined path
    after step ``t`` is ``positions[t]`` plus the cumulative forecast actions.
    """
    teacher = _as_matrix(teacher_actions)
    positions = _as_matrix(positions)
    if len(policy_actions) != len(teacher):
        raise UsageError("policy and teacher action sequences differ in length")
    if len(positions) != len(teacher) + 1:
        raise UsageError("positions must have one more entry than actions")
    terms = [_sq(a, teacher[t]) for t, a in enumerate(policy_actions)]
    for t, preds in enumerate(rollout_actions):
        for j, a in enumerate(preds):
            if t + j < len(teacher):
                terms.append(_sq(a, teacher[t + j]))
    l2 = stack(terms).sum() * (cfg.l2_weight / len(terms))
    if not cfg.use_regularizer:
        return l2, {}
    imagined = []
    for t, preds in enumerate(rollout_actions):
        pts, cur = [], Tensor(positions[t])
        for a in preds:
            cur = cur + a
            pts.append(cur)
        imagined.append(pts)
    reg, used = ndtw_regularizer(positions, imagined, cfg.ndtw_scale,
                                 cfg.normalized_regularizer, paths)
    return l2 + reg, used


def imitation_loss(teacher_actions, policy_actions: Sequence[Tensor]) -> Tensor:
    """Mean over steps of ``0.5 * |a_hat - a*|^2`` (unit-variance Gaussian NLL
    without its constant)."""
    teacher = _as_matrix(teacher_actions)
    if len(policy_actions) != len(teacher) or not len(teacher):
        raise UsageError("imitation_loss needs aligned, nonempty sequences")
    terms = [_sq(a, teacher[t]) for t, a in enumerate(policy_actions)]
    return stack(terms).sum() * (0.5 / len(terms))


@dataclass
class EpisodeBuffers:
    """Per-step tensors gathered while replaying one episode."""

    embeddings: np.ndarray
    decoded: list
    rollout_embeddings: list
    teacher_actions: np.ndarray
    policy_actions: list
    rollout_actions: list
    positions: np.ndarray
    posteriors: list
    priors: list

    def validate(self) -> None:
        n = len(self.embeddings)
        lengths = {
            "decoded": len(self.decoded),
            "rollout_embeddings": len(self.rollout_embeddings),
            "teacher_actions": len(self.teacher_actions),
            "policy_actions": len(self.policy_actions),
            "rollout_actions": len(self.rollout_actions),
            "posteriors": len(self.posteriors),
            "priors": len(self.priors),
        }
        bad = {k: v for k, v in lengths.items() if v != n}
        if n == 0 or bad or len(self.positions) != n + 1:
            raise UsageError(f"episode buffers are misaligned (steps={n}): {bad}")


def world_loss(buf: EpisodeBuffers, cfg: LossConfig,
               paths: dict | None = None) -> LossReport:
    """Assemble ``l_re + l_ac + gamma * l_kl + l_il``.

    ``paths`` (as returned in ``report.paths``) freezes every DTW alignment.
    """
    buf.validate()
    paths = paths or {}
    l_re, re_paths = reconstruction_loss(
        buf.embeddings, buf.decoded, buf.rollout_embeddings, cfg, paths=paths.get("re")
    )
    l_ac, ac_paths = action_loss(
        buf.teacher_actions, buf.policy_actions, buf.rollout_actions, buf.positions, cfg,
        paths=paths.get("ac"),
    )
    kls = [kl_diag_gaussian(q, p) for q, p in zip(buf.posteriors, buf.priors)]
    l_kl = stack(kls).sum() * (1.0 / len(kls))
    l_il = imitation_loss(buf.teacher_actions, buf.policy_actions)
    total = l_re + l_ac + l_kl * cfg.gamma + l_il
    vals = [l_re.item(), l_ac.item(), l_kl.item(), l_il.item()]
    return LossReport(
        *vals,
        total=vals[0] + vals[1] + cfg.gamma * vals[2] + vals[3],
        gamma=cfg.gamma,
        total_tensor=total,
        per_step={"kl": [k.item() for k in kls]},
        paths={"re": re_paths, "ac": ac_paths},
    )
