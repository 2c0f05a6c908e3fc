"""Finite-difference check of the full training loss on a short episode."""

from __future__ import annotations

import time

import numpy as np

from navmorph import synthenv
from navmorph.harness.config import TrainConfig
from navmorph.harness.episode import collect_episode, episode_loss
from navmorph.harness.training import initial_bank
from navmorph.numcore import no_grad
from navmorph.numcore.gradcheck import GradCheckResult, check_gradients
from navmorph.rssm import WorldModel

# Small enough that every scalar parameter can be perturbed within seconds.
SMALL_MODEL = dict(d_x=4, d_h=5, d_s=3, d_a=3, hidden=6, n_m=8, k=4)


def short_episode(seed: int, steps: int = 3) -> synthenv.Episode:
    scene = synthenv.generate_scene(seed, "seen")
    ep = synthenv.sample_episodes(scene, 1, np.random.default_rng(seed), "gradcheck")[0]
    ep.max_steps = steps
    return ep


def gradient_suite(seed: int = 0, steps: int = 3, **overrides) -> tuple[GradCheckResult, float]:
    """Check every trainable parameter; returns the result and elapsed seconds."""
    start = time.perf_counter()
    cfg = TrainConfig(seed=seed, **{**SMALL_MODEL, **overrides})
    model = WorldModel(cfg.model_config(), seed=seed)
    # Move off the initial weights so biases and gates are not at symmetric points.
    rng = np.random.default_rng([seed, 9])
    for p in model.trainable.values():
        p.data = p.data + rng.normal(0.0, 0.3, size=p.shape)
    ep = short_episode(seed, steps)
    rec = collect_episode(model, initial_bank(cfg), ep, cfg, np.random.default_rng(seed), 0.5)
    with no_grad():
        paths = episode_loss(model, rec, cfg).paths
    result = check_gradients(lambda: episode_loss(model, rec, cfg, paths).total_tensor,
                             model.trainable)
    return result, time.perf_counter() - start
