"""Training, online evaluation, and oracle fixtures."""

from navmorph.harness.config import TrainConfig
from navmorph.harness.elbo import (
    ElboReport,
    LinearGaussianSSM,
    elbo,
    elbo_oracle_check,
    exact_posterior_elbo,
    kalman_loglik,
)
from navmorph.harness.gradsuite import gradient_suite
from navmorph.harness.episode import (
    EpisodeRecord,
    blend,
    build_buffers,
    collect_episode,
    episode_loss,
    memory_context,
)
from navmorph.harness.online import (
    EvalResult,
    candidate_scores,
    evaluate_online,
    random_baseline,
    run_episode,
    select_action,
    timing_report,
)
from navmorph.harness.sweep import SWEEP_HEADER, sweep_csv, sweep_memory_size
from navmorph.harness.training import TrainResult, initial_bank, train

__all__ = [
    "ElboReport",
    "EpisodeRecord",
    "EvalResult",
    "LinearGaussianSSM",
    "SWEEP_HEADER",
    "TrainConfig",
    "TrainResult",
    "blend",
    "build_buffers",
    "candidate_scores",
    "collect_episode",
    "elbo",
    "elbo_oracle_check",
    "episode_loss",
    "evaluate_online",
    "exact_posterior_elbo",
    "gradient_suite",
    "initial_bank",
    "kalman_loglik",
    "memory_context",
    "random_baseline",
    "run_episode",
    "select_action",
    "sweep_csv",
    "sweep_memory_size",
    "timing_report",
    "train",
]
