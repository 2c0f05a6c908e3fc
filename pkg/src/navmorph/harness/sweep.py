from __future__ import annotations

import csv
import io

from navmorph.errors import UsageError
from navmorph.harness.config import TrainConfig
from navmorph.harness.online import evaluate_online
from navmorph.harness.training import train

SWEEP_HEADER = ("n_m", "sr", "spl", "osr", "ndtw", "sdtw")


def sweep_memory_size(sizes, cfg: TrainConfig, train_episodes: list, eval_episodes: list,
                      eval_seed: int = 0, self_evolve: bool = True) -> list[dict]:
    """Train and evaluate once per distinct memory size with shared seeds."""
    sizes = list(dict.fromkeys(int(s) for s in sizes))
    if not sizes:
        raise UsageError("sweep needs at least one memory size")
    rows = []
    for n_m in sizes:
        run_cfg = cfg.with_(n_m=n_m)
        result = train(run_cfg, train_episodes)
        ev = evaluate_online(result.model, result.bank, eval_episodes, run_cfg, eval_seed,
                             self_evolve)
        agg = ev.aggregate
        rows.append({"n_m": n_m, "sr": agg.sr, "spl": agg.spl, "osr": agg.osr,
                     "ndtw": agg.ndtw, "sdtw": agg.sdtw})
    return rows


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (row[k] if k == "n_m" else repr(float(row[k]))) for k in SWEEP_HEADER})
    return buf.getvalue()
