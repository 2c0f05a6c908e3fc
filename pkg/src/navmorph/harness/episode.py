"""Episode collection and differentiable replay.

Training splits every episode in two passes.  The collection pass drives the
environment without a tape, evolving the memory bank and recording every
random draw and every memory context it used.  The replay pass rebuilds the
same computation under a tape with those draws and contexts held fixed, which
makes the loss a deterministic function of the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from navmorph import cem, synthenv
from navmorph.harness.config import TrainConfig
from navmorph.losses import EpisodeBuffers, LossReport, world_loss
from navmorph.numcore import Tensor, no_grad
from navmorph.rssm import LatentState, RolloutConfig, RolloutNoise, WorldModel


@dataclass
class EpisodeRecord:
    episode_id: str
    observations: list = field(default_factory=list)
    step_noise: list = field(default_factory=list)
    contexts: list = field(default_factory=list)
    rollout_noise: list = field(default_factory=list)
    rollout_contexts: list = field(default_factory=list)
    prev_actions: list = field(default_factory=list)
    executed: list = field(default_factory=list)
    teacher: list = field(default_factory=list)
    positions: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.observations)


def memory_context(bank: cem.MemoryBank, h: np.ndarray, evolve: bool) -> np.ndarray | None:
    """Context vector for ``h``; the retrieved entries are pulled toward ``h``
    when ``evolve`` is set.  A zero query has no direction and gets no context."""
    if not np.any(h):
        return None
    retrieval = cem.retrieve_topk(bank, h)
    ctx = cem.context_vector(bank, retrieval)
    if evolve:
        cem.evolve(bank, retrieval, h)
    return ctx


def blend(h: Tensor, ctx: np.ndarray | None, alpha: float) -> Tensor:
    """Tape-side counterpart of ``cem.enhance`` with a fixed context."""
    if ctx is None or alpha == 0.0:
        return h
    return h * (1.0 - alpha) + Tensor(alpha * ctx)


def collect_episode(model: WorldModel, bank: cem.MemoryBank, episode: synthenv.Episode,
                    cfg: TrainConfig, rng: np.random.Generator, dagger_mix: float,
                    evolve: bool = True) -> EpisodeRecord:
    """Run one training episode with DAgger mixing and record what replay needs."""
    rec = EpisodeRecord(episode.episode_id)
    d_s = model.config.d_s
    alpha = cfg.alpha
    with no_grad():
        state, obs = synthenv.reset(episode, rng)
        rec.positions.append(state.position.copy())
        prev: LatentState | None = None
        a_prev = np.zeros(2)
        done = False
        while not done:
            x = model.encode_observation(obs)
            if prev is None:
                h = Tensor(np.zeros(model.config.d_h))
                ctx = None
            else:
                h = model.recurrent_step(prev)
                ctx = memory_context(bank, h.data, evolve)
            eps = rng.standard_normal(d_s)
            latent, _, _ = model.filter_step(prev, model.embed_action(a_prev), x,
                                             blend(h, ctx, alpha), eps=eps)
            ctxs: list = []

            def enhance(hh: Tensor) -> Tensor:
                c = memory_context(bank, hh.data, evolve=False)
                ctxs.append(c)
                return blend(hh, c, alpha)

            noise = RolloutNoise()
            model.imagine_rollout(latent, RolloutConfig(cfg.horizon, "sample"), enhance,
                                  rng=rng, noise=noise)
            teacher = synthenv.teacher_action(state.position, episode)
            if rng.random() < dagger_mix:
                command = teacher
            else:
                command = model.decode_action(latent.h, latent.s).data
            command = synthenv.clip_action(command, episode.max_step_len)
            before = state.position.copy()
            rec.observations.append(obs)
            _, obs, done = synthenv.step(state, command)

            rec.step_noise.append(eps)
            rec.contexts.append(ctx)
            rec.rollout_noise.append(noise.eps)
            rec.rollout_contexts.append(ctxs)
            rec.prev_actions.append(a_prev)
            rec.executed.append(command)
            rec.teacher.append(teacher)
            rec.positions.append(state.position.copy())
            a_prev = state.position - before
            prev = latent
    return rec


def build_buffers(model: WorldModel, rec: EpisodeRecord, cfg: TrainConfig) -> EpisodeBuffers:
    """Replay a recorded episode through the model (under the active tape)."""
    alpha = cfg.alpha
    buf = EpisodeBuffers(
        embeddings=np.zeros((len(rec), model.config.d_x)), decoded=[], rollout_embeddings=[],
        teacher_actions=np.asarray(rec.teacher), policy_actions=[], rollout_actions=[],
        positions=np.asarray(rec.positions), posteriors=[], priors=[],
    )
    prev: LatentState | None = None
    for t in range(len(rec)):
        x = model.encode_observation(rec.observations[t])
        buf.embeddings[t] = x.data
        h = Tensor(np.zeros(model.config.d_h)) if prev is None else model.recurrent_step(prev)
        latent, post, prior = model.filter_step(
            prev, model.embed_action(rec.prev_actions[t]), x,
            blend(h, rec.contexts[t], alpha), eps=rec.step_noise[t],
        )
        buf.posteriors.append(post)
        buf.priors.append(prior)
        buf.decoded.append(model.decode_visual(latent.h, latent.s))
        buf.policy_actions.append(model.decode_action(latent.h, latent.s))
        ctxs = iter(rec.rollout_contexts[t])
        steps = model.imagine_rollout(
            latent, RolloutConfig(cfg.horizon, "sample"),
            lambda hh: blend(hh, next(ctxs), alpha),
            noise=RolloutNoise(list(rec.rollout_noise[t])),
        )
        buf.rollout_embeddings.append([s.embedding for s in steps])
        buf.rollout_actions.append([s.action for s in steps])
        prev = latent
    return buf


def episode_loss(model: WorldModel, rec: EpisodeRecord, cfg: TrainConfig,
                 paths: dict | None = None) -> LossReport:
    """Total training loss of a recorded episode; ``paths`` freezes DTW alignments."""
    return world_loss(build_buffers(model, rec, cfg), cfg.loss_config(), paths)
