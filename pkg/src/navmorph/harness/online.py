"""Gradient-free deployment: candidate re-weighting and memory self-evolution."""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from navmorph import cem, synthenv
from navmorph.errors import ConfigError, UsageError
from navmorph.harness.config import TrainConfig
from navmorph.harness.episode import blend, memory_context
from navmorph.metrics import MetricReport, Trajectory, aggregate, evaluate
from navmorph.numcore import Tensor, no_grad
from navmorph.rssm import LatentState, RolloutConfig, WorldModel


def candidate_scores(candidates, policy_mean, position, imagined,
                     proximity_weight: float) -> np.ndarray:
    cands = np.asarray(candidates, dtype=np.float64).reshape(-1, 2)
    mean = np.asarray(policy_mean, dtype=np.float64)
    scores = -((cands - mean) ** 2).sum(axis=1)
    if imagined is not None and len(imagined) and proximity_weight:
        ends = np.asarray(position, dtype=np.float64) + cands
        pts = np.asarray(imagined, dtype=np.float64).reshape(-1, 2)
        gaps = ((ends[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1).min(axis=1)
        scores = scores - proximity_weight * gaps
    return scores


def select_action(candidates, policy_mean, position, imagined,
                  proximity_weight: float) -> tuple[int, np.ndarray]:
    """Pick the candidate that stays near the policy mean and lands near the
    imagined path; ties go to the lowest index."""
    if len(candidates) == 0:
        raise UsageError("select_action needs at least one candidate")
    scores = candidate_scores(candidates, policy_mean, position, imagined, proximity_weight)
    best = int(np.argmax(scores))  # argmax returns the first maximum
    return best, np.asarray(candidates[best], dtype=np.float64)


@dataclass
class EpisodeOutcome:
    episode: synthenv.Episode
    records: list
    report: MetricReport
    seconds: float = 0.0


@dataclass
class EvalResult:
    outcomes: list
    aggregate: MetricReport
    bank: cem.MemoryBank
    seconds: float = 0.0

    @property
    def records(self) -> list:
        return [r for o in self.outcomes for r in o.records]

    @property
    def reports(self) -> list:
        return [o.report for o in self.outcomes]


def episode_rng(seed: int, episode: synthenv.Episode) -> np.random.Generator:
    """Per-episode stream keyed by the episode id, so results do not depend
    on where an episode sits in the evaluation order."""
    return np.random.default_rng([seed, 3, zlib.crc32(episode.episode_id.encode())])


def trajectory_for(episode: synthenv.Episode, positions) -> Trajectory:
    return Trajectory(np.asarray(positions), episode.reference, episode.goal,
                      episode.shortest_path_length, episode.success_radius)


def _finish(episode, state, records) -> list:
    records.append({
        "episode_id": episode.episode_id, "scene_seed": episode.scene.scene_seed,
        "step": state.steps, "position": state.position.tolist(), "action": [0.0, 0.0],
        "teacher_action": None, "done": True,
    })
    return records


def run_episode(model: WorldModel, bank: cem.MemoryBank, episode: synthenv.Episode,
                cfg: TrainConfig, rng: np.random.Generator,
                self_evolve: bool) -> EpisodeOutcome:
    """Drive one episode with the trained policy and posterior means."""
    start = time.perf_counter()
    state, obs = synthenv.reset(episode, rng)
    records: list = []
    prev: LatentState | None = None
    a_prev = np.zeros(2)
    imagined = None
    done = False
    with no_grad():
        while not done:
            x = model.encode_observation(obs)
            if prev is None:
                h, ctx = Tensor(np.zeros(model.config.d_h)), None
            else:
                h = model.recurrent_step(prev)
                ctx = memory_context(bank, h.data, evolve=self_evolve)
            latent, _, _ = model.filter_step(prev, model.embed_action(a_prev), x,
                                             blend(h, ctx, cfg.alpha), mode="eval")
            steps = model.imagine_rollout(
                latent, RolloutConfig(cfg.horizon, "mean"),
                lambda hh: blend(hh, memory_context(bank, hh.data, evolve=False), cfg.alpha),
            )
            mean = model.decode_action(latent.h, latent.s).data
            cands = [mean] + [mean + rng.normal(0.0, cfg.candidate_sigma, 2)
                              for _ in range(cfg.n_candidates)]
            _, choice = select_action(cands, mean, state.position, imagined, cfg.proximity_weight)
            command = synthenv.clip_action(choice, episode.max_step_len)
            teacher = synthenv.teacher_action(state.position, episode)
            records.append({
                "episode_id": episode.episode_id, "scene_seed": episode.scene.scene_seed,
                "step": state.steps, "position": state.position.tolist(),
                "action": command.tolist(), "teacher_action": teacher.tolist(), "done": False,
            })
            before = state.position.copy()
            # Forecast positions beyond the next one, relative to where we stand
            # now; the next step's candidates are scored against them.
            path = before + np.cumsum([s.action.data for s in steps], axis=0) \
                if steps else np.zeros((0, 2))
            imagined = path[1:] if len(path) > 1 else None
            _, obs, done = synthenv.step(state, command)
            a_prev = state.position - before
            prev = latent
    _finish(episode, state, records)
    report = evaluate(trajectory_for(episode, state.path))
    return EpisodeOutcome(episode, records, report, time.perf_counter() - start)


def evaluate_online(model: WorldModel, bank: cem.MemoryBank, episodes: list,
                    cfg: TrainConfig, seed: int, self_evolve: bool) -> EvalResult:
    """Evaluate episodes strictly in order.  The bank passed in is copied; the
    returned one has evolved across episodes iff ``self_evolve``."""
    if not episodes:
        raise ConfigError("evaluation split is empty")
    work = bank.copy(frozen=not self_evolve)
    start = time.perf_counter()
    outcomes = []
    for ep in episodes:
        outcomes.append(run_episode(model, work, ep, cfg, episode_rng(seed, ep), self_evolve))
    return EvalResult(outcomes, aggregate(o.report for o in outcomes), work,
                      time.perf_counter() - start)


def random_baseline(episodes: list, seed: int) -> MetricReport:
    """Uniformly random headings at full step length, with the same seeds."""
    if not episodes:
        raise ConfigError("evaluation split is empty")
    reports = []
    for ep in episodes:
        rng = episode_rng(seed, ep)
        state, _ = synthenv.reset(ep, rng)
        done = False
        while not done:
            theta = rng.uniform(0.0, 2 * np.pi)
            delta = ep.max_step_len * np.array([np.cos(theta), np.sin(theta)])
            _, _, done = synthenv.step(state, delta)
        reports.append(evaluate(trajectory_for(ep, state.path)))
    return aggregate(reports)


def timing_report(model: WorldModel, bank: cem.MemoryBank, episodes: list,
                  cfg: TrainConfig, seed: int = 0) -> dict:
    """Per-episode wall time with a frozen and an evolving memory.  The two
    modes alternate episode by episode so machine load affects both alike."""
    if not episodes:
        raise ConfigError("evaluation split is empty")
    frozen = bank.copy(frozen=True)
    evolving = bank.copy(frozen=False)
    times = {True: 0.0, False: 0.0}
    for i, ep in enumerate(episodes):
        order = (False, True) if i % 2 == 0 else (True, False)
        for mode in order:
            work = evolving if mode else frozen
            t0 = time.perf_counter()
            run_episode(model, work, ep, cfg, episode_rng(seed, ep), self_evolve=mode)
            times[mode] += time.perf_counter() - t0
    n = len(episodes)
    return {
        "frozen_s_per_episode": times[False] / n,
        "evolving_s_per_episode": times[True] / n,
        "overhead_ratio": times[True] / times[False],
        "frozen_evolve_calls": frozen.evolve_calls + frozen.skipped_evolutions,
        "evolving_evolve_calls": evolving.evolve_calls,
    }
