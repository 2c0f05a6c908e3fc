from __future__ import annotations

from dataclasses import dataclass, fields, replace

from navmorph.errors import ConfigError
from navmorph.losses import LossConfig
from navmorph.rssm import ModelConfig
from navmorph.synthenv import obs_dim


@dataclass(frozen=True)
class TrainConfig:
    """Training and evaluation settings.

    Reference values: horizon 2, gamma 1e-3, K 16, alpha = beta = 0.7 and a
    memory of 1000 entries; the memory defaults to 256 here so its capacity
    matters within short desk-scale runs.
    """

    episodes: int = 300
    horizon: int = 2
    gamma: float = 1e-3
    alpha: float = 0.7
    beta: float = 0.7
    k: int = 16
    n_m: int = 256
    seed: int = 0
    eval_every: int = 0
    dagger_mix: float = 0.7
    dagger_mix_final: float = 0.3
    learning_rate: float = 1e-3
    max_grad_norm: float = 5.0
    d_x: int = 32
    d_h: int = 64
    d_s: int = 16
    d_a: int = 16
    hidden: int = 64
    ndtw_scale: float = 0.5
    l2_weight: float = 1.0
    normalized_regularizer: bool = True
    proximity_weight: float = 0.5
    n_candidates: int = 8
    candidate_sigma: float = 0.05

    def __post_init__(self):
        checks = [
            (self.episodes >= 0, "episodes must be >= 0"),
            (self.horizon >= 0, "horizon must be >= 0"),
            (self.gamma >= 0, "gamma must be >= 0"),
            (0 <= self.alpha <= 1 and 0 <= self.beta <= 1, "alpha and beta must lie in [0, 1]"),
            (self.k >= 1 and self.n_m >= 1, "k and n_m must be >= 1"),
            (0 <= self.dagger_mix <= 1 and 0 <= self.dagger_mix_final <= 1,
             "dagger_mix values must lie in [0, 1]"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.max_grad_norm > 0, "max_grad_norm must be positive"),
            (min(self.d_x, self.d_h, self.d_s, self.d_a, self.hidden) >= 1,
             "model sizes must be >= 1"),
            (self.ndtw_scale > 0 and self.l2_weight > 0, "ndtw_scale and l2_weight must be positive"),
            (self.proximity_weight >= 0, "proximity_weight must be >= 0"),
            (self.n_candidates >= 0 and self.candidate_sigma >= 0,
             "candidate settings must be >= 0"),
            (self.eval_every >= 0, "eval_every must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def effective_k(self) -> int:
        return min(self.k, self.n_m)

    def mix_at(self, episode: int) -> float:
        """DAgger mixing probability, decayed linearly over the run."""
        if self.episodes <= 1:
            return self.dagger_mix
        frac = episode / (self.episodes - 1)
        return self.dagger_mix + frac * (self.dagger_mix_final - self.dagger_mix)

    def model_config(self) -> ModelConfig:
        return ModelConfig(d_obs=obs_dim(), d_x=self.d_x, d_h=self.d_h, d_s=self.d_s,
                           d_a=self.d_a, hidden=self.hidden)

    def loss_config(self) -> LossConfig:
        return LossConfig(gamma=self.gamma, ndtw_scale=self.ndtw_scale,
                          l2_weight=self.l2_weight,
                          normalized_regularizer=self.normalized_regularizer)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}
