from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from navmorph import cem
from navmorph.errors import NonFiniteError, UsageError
from navmorph.harness.config import TrainConfig
from navmorph.harness.episode import collect_episode, episode_loss
from navmorph.numcore import Adam, Tape
from navmorph.rssm import WorldModel
from navmorph.synthenv import Episode

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: WorldModel
    bank: cem.MemoryBank
    log: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def totals(self) -> list[float]:
        return [r["total"] for r in self.log]


def initial_bank(cfg: TrainConfig) -> cem.MemoryBank:
    rng = np.random.default_rng([cfg.seed, 2])
    return cem.init_random(cfg.n_m, cfg.d_h, rng, cfg.effective_k, cfg.alpha, cfg.beta)


def train(cfg: TrainConfig, episodes: list[Episode], dump_dir=None,
          on_episode=None) -> TrainResult:
    """One optimizer step per episode, cycling through ``episodes`` in order.

    A non-finite loss or gradient writes the current checkpoint and memory to
    ``dump_dir`` (when given) and re-raises.
    """
    if cfg.episodes and not episodes:
        raise UsageError("training needs at least one episode")
    start = time.perf_counter()
    model = WorldModel(cfg.model_config(), seed=cfg.seed)
    bank = initial_bank(cfg)
    trainable = model.trainable
    opt = Adam(trainable, lr=cfg.learning_rate, max_grad_norm=cfg.max_grad_norm)
    result = TrainResult(model, bank)
    for i in range(cfg.episodes):
        ep = episodes[i % len(episodes)]
        rng = np.random.default_rng([cfg.seed, 1, i])
        try:
            rec = collect_episode(model, bank, ep, cfg, rng, cfg.mix_at(i))
            trainable.zero_grad()
            with Tape() as tape:
                report = episode_loss(model, rec, cfg)
            if not math.isfinite(report.total):
                raise NonFiniteError(f"non-finite loss at episode {i}")
            tape.backward(report.total_tensor)
            opt.step()
        except NonFiniteError:
            if dump_dir is not None:
                dump = Path(dump_dir)
                model.save(dump / "nan_dump_checkpoint.json")
                cem.save(bank, dump / "nan_dump_cem.json")
                log.error("non-finite value at episode %d; state dumped to %s", i, dump)
            raise
        entry = {"episode": i, "step": opt.state.step_count, **report.as_record()}
        result.log.append(entry)
        if on_episode is not None:
            on_episode(i, entry, result)
    result.seconds = time.perf_counter() - start
    return result
