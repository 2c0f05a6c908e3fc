"""Recurrent state-space world model.

The deterministic path ``h`` is carried by a GRU driven by the previous
stochastic state ``s``.  A posterior head sees the current observation
embedding and the previously executed action; a prior head sees only ``h``
and the action the policy would have taken.  Decoders map ``(h, s)`` back to
an observation embedding and to a planar displacement.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from navmorph.errors import DimensionError, UsageError
from navmorph.numcore import (
    GRUCell,
    Linear,
    MLP,
    ParameterSet,
    Tensor,
    concat,
    no_grad,
    parse_checkpoint,
    sample_gaussian,
    save_checkpoint,
    softplus_floor,
)

ACTION_DIM = 2


@dataclass
class ModelConfig:
    d_obs: int = 20
    d_x: int = 32
    d_h: int = 64
    d_s: int = 16
    d_a: int = 16
    hidden: int = 64
    depth: int = 1
    sigma_floor: float = 0.1


@dataclass
class LatentState:
    h: Tensor
    s: Tensor


@dataclass
class GaussianParams:
    mu: Tensor
    sigma: Tensor

    @classmethod
    def standard(cls, dim: int) -> "GaussianParams":
        return cls(Tensor(np.zeros(dim)), Tensor(np.ones(dim)))


@dataclass
class RolloutConfig:
    horizon: int = 2
    sample_mode: str = "mean"

    def __post_init__(self):
        if self.horizon < 0:
            raise UsageError(f"rollout horizon must be >= 0, got {self.horizon}")
        if self.sample_mode not in ("mean", "sample"):
            raise UsageError(f"unknown sample_mode {self.sample_mode!r}")


@dataclass
class RolloutStep:
    h: Tensor
    s: Tensor
    action: Tensor
    embedding: Tensor


@dataclass
class RolloutNoise:
    """Noise consumed by a rollout, kept so a rollout can be replayed."""

    eps: list = field(default_factory=list)


Enhancer = Callable[[Tensor], Tensor]


def _check_dim(name: str, t: Tensor, dim: int) -> None:
    if t.data.ndim != 1 or t.shape[0] != dim:
        raise DimensionError(f"{name}: expected shape ({dim},), got {t.shape}")


class WorldModel:
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        self.params = ParameterSet()
        hid = [config.hidden] * config.depth
        p = self.params
        self.encoder = MLP(p, "encoder", [config.d_obs, *hid, config.d_x], rng)
        self.recurrent = GRUCell(p, "recurrent", config.d_s, config.d_h, rng)
        self.posterior_head = MLP(
            p, "posterior", [config.d_h + config.d_a + config.d_x, *hid, 2 * config.d_s], rng
        )
        self.prior_head = MLP(p, "prior", [config.d_h + config.d_a, *hid, 2 * config.d_s], rng)
        self.visual_decoder = MLP(p, "visual_decoder", [config.d_h + config.d_s, *hid, config.d_x], rng)
        self.policy = MLP(p, "policy", [config.d_h + config.d_s, *hid, ACTION_DIM], rng)
        self.action_embedder = Linear(p, "action_embedder", ACTION_DIM, config.d_a, rng)

    @property
    def trainable(self) -> ParameterSet:
        """Everything except the observation encoder, which stays a fixed random
        feature map so reconstruction targets do not drift during training."""
        return self.params.subset(lambda n: not n.startswith("encoder."))

    # -- components -------------------------------------------------------
    def encode_observation(self, obs) -> Tensor:
        obs = obs if isinstance(obs, Tensor) else Tensor(obs)
        _check_dim("observation", obs, self.config.d_obs)
        with no_grad():
            return self.encoder(obs).detach()

    def initial_state(self, rng: np.random.Generator | None = None,
                      mode: str = "eval") -> LatentState:
        """h is exactly zero; s is a standard-normal draw in train mode and the
        distribution mean (zero) in eval mode."""
        c = self.config
        h = Tensor(np.zeros(c.d_h))
        if mode == "train":
            if rng is None:
                raise UsageError("train-mode initial state needs an rng")
            s = Tensor(rng.standard_normal(c.d_s))
        elif mode == "eval":
            s = Tensor(np.zeros(c.d_s))
        else:
            raise UsageError(f"unknown mode {mode!r}")
        return LatentState(h, s)

    def recurrent_step(self, prev: LatentState) -> Tensor:
        return self.recurrent(prev.h, prev.s)

    def _gaussian_head(self, head: MLP, inputs: Tensor) -> GaussianParams:
        out = head(inputs)
        d_s = self.config.d_s
        return GaussianParams(out[:d_s], softplus_floor(out[d_s:], self.config.sigma_floor))

    def posterior(self, h: Tensor, a_prev: Tensor, x: Tensor) -> GaussianParams:
        c = self.config
        _check_dim("h", h, c.d_h)
        _check_dim("action embedding", a_prev, c.d_a)
        _check_dim("observation embedding", x, c.d_x)
        return self._gaussian_head(self.posterior_head, concat([h, a_prev, x]))

    def prior(self, h: Tensor, a_hat_prev: Tensor) -> GaussianParams:
        c = self.config
        _check_dim("h", h, c.d_h)
        _check_dim("action embedding", a_hat_prev, c.d_a)
        return self._gaussian_head(self.prior_head, concat([h, a_hat_prev]))

    def decode_visual(self, h: Tensor, s: Tensor) -> Tensor:
        return self.visual_decoder(concat([h, s]))

    def decode_action(self, h: Tensor, s: Tensor) -> Tensor:
        return self.policy(concat([h, s]))

    def embed_action(self, delta) -> Tensor:
        delta = delta if isinstance(delta, Tensor) else Tensor(delta)
        _check_dim("action", delta, ACTION_DIM)
        return self.action_embedder(delta)

    # -- composed steps ---------------------------------------------------
    def filter_step(
        self,
        prev: LatentState | None,
        a_prev_emb: Tensor,
        obs_emb: Tensor,
        enhanced_h: Tensor,
        rng: np.random.Generator | None = None,
        eps: np.ndarray | None = None,
        mode: str = "train",
    ) -> tuple[LatentState, GaussianParams, GaussianParams]:
        """Infer ``s_t`` from the posterior given the memory-enhanced ``h_t``.

        ``prev=None`` marks the first step, whose prior is N(0, I).  Otherwise
        the prior is conditioned on the action the policy proposes from
        ``prev``.  In eval mode ``s_t`` is the posterior mean.
        """
        post = self.posterior(enhanced_h, a_prev_emb, obs_emb)
        if prev is None:
            prior = GaussianParams.standard(self.config.d_s)
        else:
            a_hat = self.decode_action(prev.h, prev.s)
            prior = self.prior(enhanced_h, self.embed_action(a_hat))
        if mode == "eval":
            s = post.mu
        else:
            s = sample_gaussian(post.mu, post.sigma, rng=rng, eps=eps)
        return LatentState(enhanced_h, s), post, prior

    def imagine_rollout(
        self,
        start: LatentState,
        config: RolloutConfig,
        enhance: Enhancer | None = None,
        rng: np.random.Generator | None = None,
        noise: RolloutNoise | None = None,
    ) -> list[RolloutStep]:
        """Open-loop foresight: ``a = pi(h, s)``, ``h' = f(h, s)`` (then
        ``enhance``), ``s' ~ prior(h', embed(a))``, ``x' = decode(h', s')``.

        In ``sample`` mode the draws are appended to ``noise.eps`` when it is
        empty, or replayed from it when it is already filled.
        """
        if config.horizon < 0:
            raise UsageError("rollout horizon must be >= 0")
        replay = noise is not None and len(noise.eps) > 0
        if replay and len(noise.eps) < config.horizon:
            raise UsageError("recorded rollout noise is shorter than the horizon")
        h, s = start.h, start.s
        steps = []
        for j in range(config.horizon):
            action = self.decode_action(h, s)
            h = self.recurrent(h, s)
            if enhance is not None:
                h = enhance(h)
            pr = self.prior(h, self.embed_action(action))
            if config.sample_mode == "mean":
                s = pr.mu
            else:
                if replay:
                    eps = noise.eps[j]
                else:
                    if rng is None:
                        raise UsageError("sample-mode rollout needs an rng or recorded noise")
                    eps = rng.standard_normal(self.config.d_s)
                    if noise is not None:
                        noise.eps.append(eps)
                s = sample_gaussian(pr.mu, pr.sigma, eps=eps)
            steps.append(RolloutStep(h, s, action, self.decode_visual(h, s)))
        return steps

    # -- persistence ------------------------------------------------------
    def to_json(self) -> str:
        return save_checkpoint(self.params, {"config": asdict(self.config)})

    @classmethod
    def from_json(cls, text: str) -> "WorldModel":
        state, meta = parse_checkpoint(text)
        model = cls(ModelConfig(**meta.get("config", {})))
        model.params.load_state(state)
        return model

    def save(self, path) -> None:
        from navmorph.io import atomic_write_text

        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "WorldModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

