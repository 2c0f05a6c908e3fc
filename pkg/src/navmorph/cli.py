"""``navmorph`` command line: train, eval, sweep, metrics, gradcheck, oracle.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then the NAVMORPH_SEED environment variable (seed
only), then command-line flags.  Exit status is 0 on success, 1 when a check
fails, and 2 for configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import OrderedDict
from dataclasses import asdict, fields
from pathlib import Path

from navmorph import cem, plotting
from navmorph.errors import ConfigError, FormatError, NavMorphError, UsageError
from navmorph.harness import (
    TrainConfig,
    elbo_oracle_check,
    evaluate_online,
    gradient_suite,
    sweep_csv,
    sweep_memory_size,
    train,
)
from navmorph.harness.online import trajectory_for
from navmorph.io import atomic_write_text, read_jsonl, run_lock, write_jsonl
from navmorph.metrics import aggregate, evaluate, reports_to_csv
from navmorph.rssm import WorldModel
from navmorph.synthenv import SPLITS, Manifest, build_manifest

log = logging.getLogger("navmorph")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
GRADCHECK_TOL = 1e-4


class CheckFailed(NavMorphError):
    """A verification command found a violation."""


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _sizes(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(s) for s in text)
    try:
        return tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"sizes must be comma-separated integers, got {text!r}") from exc


_TRAIN_HELP = {
    "episodes": "training episodes (one optimizer step each)",
    "horizon": "foresight rollout length",
    "gamma": "weight of the KL term",
    "alpha": "memory blend factor for the recurrent state",
    "beta": "memory update factor",
    "k": "entries retrieved per query (capped at n_m)",
    "n_m": "memory size",
    "seed": "random seed (NAVMORPH_SEED overrides the config file)",
    "eval_every": "evaluate on val_seen every N training episodes (0 disables)",
    "dagger_mix": "initial probability of executing the teacher action",
    "dagger_mix_final": "teacher probability at the last episode (linear decay)",
    "learning_rate": "Adam step size",
    "max_grad_norm": "global gradient norm clip",
    "d_x": "observation embedding size",
    "d_h": "recurrent state size (also the memory entry size)",
    "d_s": "stochastic state size",
    "d_a": "action embedding size",
    "hidden": "hidden width of every head",
    "ndtw_scale": "distance scale of the position NDTW regularizer",
    "l2_weight": "weight of the squared action error",
    "normalized_regularizer": "divide the NDTW regularizer by its term count",
    "proximity_weight": "pull of candidates toward the imagined path",
    "n_candidates": "perturbed action candidates besides the policy mean",
    "candidate_sigma": "standard deviation of candidate perturbations",
}

_CASTS = {"int": int, "float": float, "bool": _bool}

# name -> (cast, default, help)
RUN_KEYS = OrderedDict([
    ("out", (str, None, "output directory (locked while the command runs)")),
    ("checkpoint", (str, None, "model checkpoint to evaluate")),
    ("cem", (str, None, "memory snapshot to evaluate (never modified)")),
    ("manifest", (str, None, "dataset manifest; a default one is generated if omitted")),
    ("manifest_seed", (int, 0, "seed of the generated default manifest")),
    ("n_train", (int, 300, "train_seen size of a generated manifest")),
    ("n_val_seen", (int, 50, "val_seen size of a generated manifest")),
    ("n_val_unseen", (int, 50, "val_unseen size of a generated manifest")),
    ("split", (str, "val_unseen", f"evaluation split, one of {', '.join(SPLITS)}")),
    ("self_evolve", (_bool, True, "let the memory evolve during evaluation")),
    ("sizes", (_sizes, (16, 64, 256), "comma-separated memory sizes for sweep")),
    ("trajectories", (str, None, "trajectory log read by the metrics command")),
    ("instances", (int, 100, "random instances checked by the oracle command")),
    ("fit_steps", (int, 500, "bound-fitting steps per oracle instance")),
])


def _train_keys() -> OrderedDict:
    keys = OrderedDict()
    defaults = TrainConfig()
    for f in fields(TrainConfig):
        keys[f.name] = (_CASTS[f.type], getattr(defaults, f.name), _TRAIN_HELP[f.name])
    return keys


ALL_KEYS = OrderedDict(list(_train_keys().items()) + list(RUN_KEYS.items()))


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _cast(key, value, f"{source}:{lineno}")
    return values


def _cast(key: str, value, where: str):
    cast = ALL_KEYS[key][0]
    try:
        return cast(value)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {key}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {key}: cannot parse {value!r}") from exc


def resolve_settings(args: argparse.Namespace, environ=None) -> dict:
    """Merge defaults < config file < NAVMORPH_SEED < flags."""
    environ = os.environ if environ is None else environ
    settings = {k: entry[1] for k, entry in ALL_KEYS.items()}
    if args.config is not None:
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except UnicodeDecodeError as exc:
            raise ConfigError(f"config file {path} is not UTF-8: {exc}") from None
        settings.update(parse_config_text(text, str(path)))
    if environ.get("NAVMORPH_SEED") not in (None, ""):
        settings["seed"] = _cast("seed", environ["NAVMORPH_SEED"], "NAVMORPH_SEED")
    for key in ALL_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = _cast(key, value, f"--{key.replace('_', '-')}")
    return settings


def train_config(settings: dict) -> TrainConfig:
    return TrainConfig(**{f.name: settings[f.name] for f in fields(TrainConfig)})


def _require(settings: dict, *keys) -> None:
    missing = [k for k in keys if not settings.get(k)]
    if missing:
        raise ConfigError("missing required setting(s): " + ", ".join(
            f"--{k.replace('_', '-')}" for k in missing))


def load_manifest(settings: dict) -> Manifest:
    if settings["manifest"]:
        path = Path(settings["manifest"])
        if not path.exists():
            raise ConfigError(f"manifest not found: {path}")
        return Manifest.loads(path.read_text(encoding="utf-8"))
    return build_manifest(settings["manifest_seed"], settings["n_train"],
                          settings["n_val_seen"], settings["n_val_unseen"])


def _input(path_text: str, what: str) -> Path:
    path = Path(path_text)
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _emit(obj) -> None:
    print(json.dumps(obj), flush=True)


# -- commands -------------------------------------------------------------------

def cmd_train(settings: dict) -> int:
    _require(settings, "out")
    cfg = train_config(settings)
    manifest = load_manifest(settings)
    episodes = manifest.episodes("train_seen") if cfg.episodes else []
    with run_lock(settings["out"]) as out:
        atomic_write_text(out / "manifest.json", manifest.dumps())
        eval_log = []
        val = manifest.episodes("val_seen") if cfg.eval_every else []

        def on_episode(i, entry, result):
            if cfg.eval_every and (i + 1) % cfg.eval_every == 0:
                agg = evaluate_online(result.model, result.bank, val, cfg, cfg.seed, False).aggregate
                eval_log.append({"episode": i, **agg.as_dict()})
                log.info("episode %d: val_seen sr=%.3f spl=%.3f", i, agg.sr, agg.spl)

        result = train(cfg, episodes, dump_dir=out, on_episode=on_episode)
        result.model.save(out / "checkpoint.json")
        cem.save(result.bank, out / "cem.json")
        write_jsonl(out / "metrics.jsonl", result.log)
        if eval_log:
            write_jsonl(out / "eval_log.jsonl", eval_log)
        atomic_write_text(out / "config.resolved", "".join(
            f"{k} = {v}\n" for k, v in asdict(cfg).items()))
        plotting.loss_curve(result.log, out / "loss_curve.png")
    _emit({"episodes": cfg.episodes, "seconds": result.seconds,
           "final_total": result.log[-1]["total"] if result.log else None})
    return EXIT_OK


def _eval_config(settings: dict, model: WorldModel, bank: cem.MemoryBank) -> TrainConfig:
    mc = model.config
    return train_config(settings).with_(
        alpha=bank.alpha, beta=bank.beta, n_m=bank.n_m, k=bank.k,
        d_x=mc.d_x, d_h=mc.d_h, d_s=mc.d_s, d_a=mc.d_a, hidden=mc.hidden,
    )


def cmd_eval(settings: dict) -> int:
    _require(settings, "out", "checkpoint", "cem")
    model = WorldModel.load(_input(settings["checkpoint"], "checkpoint"))
    bank = cem.load(_input(settings["cem"], "memory snapshot"))
    cfg = _eval_config(settings, model, bank)
    episodes = load_manifest(settings).episodes(settings["split"])
    with run_lock(settings["out"]) as out:
        ev = evaluate_online(model, bank, episodes, cfg, cfg.seed, settings["self_evolve"])
        write_jsonl(out / "trajectories.jsonl", ev.records)
        rows = [(o.episode.episode_id, o.report) for o in ev.outcomes]
        atomic_write_text(out / "metrics.csv", reports_to_csv(rows + [("aggregate", ev.aggregate)]))
        summary = {"split": settings["split"], "seed": cfg.seed,
                   "self_evolve": settings["self_evolve"], "episodes": len(episodes),
                   "seconds": ev.seconds, "aggregate": ev.aggregate.as_dict()}
        atomic_write_text(out / "summary.json", json.dumps(summary, indent=1) + "\n")
        if settings["self_evolve"]:
            cem.save(ev.bank, out / "cem_evolved.json")
        plotting.trajectories(ev.outcomes, out / "trajectories.png")
    _emit(summary)
    return EXIT_OK


def cmd_sweep(settings: dict) -> int:
    _require(settings, "out")
    cfg = train_config(settings)
    manifest = load_manifest(settings)
    with run_lock(settings["out"]) as out:
        rows = sweep_memory_size(settings["sizes"], cfg, manifest.episodes("train_seen"),
                                 manifest.episodes(settings["split"]), cfg.seed,
                                 settings["self_evolve"])
        atomic_write_text(out / "sweep.csv", sweep_csv(rows))
        plotting.sweep_figure(rows, out / "sweep.png")
    for row in rows:
        _emit(row)
    return EXIT_OK


def group_trajectories(records) -> "OrderedDict[str, list]":
    """Split a trajectory log into episodes and check each one's step layout."""
    episodes: OrderedDict = OrderedDict()
    for rec in records:
        try:
            episodes.setdefault(rec["episode_id"], []).append(rec)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"trajectory record without episode_id: {rec!r}") from exc
    for eid, recs in episodes.items():
        steps = [r["step"] for r in recs]
        if steps != list(range(len(recs))):
            raise FormatError(f"episode {eid}: steps are not contiguous from 0")
        if [r["done"] for r in recs].count(True) != 1 or not recs[-1]["done"]:
            raise FormatError(f"episode {eid}: expected exactly one terminal record")
    return episodes


def cmd_metrics(settings: dict) -> int:
    _require(settings, "trajectories")
    grouped = group_trajectories(read_jsonl(_input(settings["trajectories"], "trajectory log")))
    manifest = load_manifest(settings)
    known = {}
    for split in manifest.splits:
        if manifest.splits[split]:
            ids = {row["episode_id"] for row in manifest.splits[split]}
            if ids & set(grouped):
                known.update({e.episode_id: e for e in manifest.episodes(split)})
    rows = []
    for eid, recs in grouped.items():
        if eid not in known:
            raise ConfigError(f"episode {eid!r} is not in the manifest")
        traj = trajectory_for(known[eid], [r["position"] for r in recs])
        rows.append((eid, evaluate(traj)))
    agg = aggregate(r for _, r in rows)
    if settings["out"]:
        with run_lock(settings["out"]) as out:
            atomic_write_text(out / "metrics.csv", reports_to_csv(rows + [("aggregate", agg)]))
    _emit({"episodes": len(rows), "aggregate": agg.as_dict()})
    return EXIT_OK


def cmd_gradcheck(settings: dict) -> int:
    result, seconds = gradient_suite(settings["seed"])
    _emit({"max_rel_error": result.max_rel_error, "worst_parameter": result.worst_parameter,
           "worst_index": list(result.worst_index), "entries_checked": result.n_checked,
           "seconds": seconds})
    print(f"max relative error {result.max_rel_error:.3e} "
          f"({'<' if result.passed(GRADCHECK_TOL) else '>='} {GRADCHECK_TOL:g})", flush=True)
    if not result.passed(GRADCHECK_TOL):
        raise CheckFailed(f"gradient check failed at {result.worst_parameter}{list(result.worst_index)}")
    return EXIT_OK


def cmd_oracle(settings: dict) -> int:
    violations, stalled = [], []
    worst = -float("inf")
    for i in range(settings["instances"]):
        seed = settings["seed"] + i
        rep = elbo_oracle_check(seed, fit_steps=settings["fit_steps"])
        worst = max(worst, rep.elbo - rep.exact_loglik)
        if not rep.bound_holds:
            violations.append({"seed": seed, **asdict(rep)})
        if not rep.fitted_gap < rep.initial_gap:
            stalled.append(seed)
    _emit({"instances": settings["instances"], "violations": len(violations),
           "max_elbo_minus_loglik": worst, "not_improved": stalled})
    if violations or stalled:
        for v in violations:
            print(json.dumps(v), file=sys.stderr)
        raise CheckFailed(f"{len(violations)} bound violation(s), {len(stalled)} fit(s) without progress")
    return EXIT_OK


COMMANDS = {
    "train": (cmd_train, "train the world model and policy; writes checkpoint, memory, metrics log"),
    "eval": (cmd_eval, "evaluate a checkpoint online; writes trajectories, metrics, figure"),
    "sweep": (cmd_sweep, "train and evaluate once per memory size; writes sweep.csv"),
    "metrics": (cmd_metrics, "recompute metrics from a trajectory log"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of the full training loss"),
    "oracle": (cmd_oracle, "check the variational bound against exact Kalman likelihoods"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file (# starts a comment)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    group = common.add_argument_group("settings (also accepted as config-file keys)")
    for key, (_, default, text) in ALL_KEYS.items():
        shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None,
                           metavar="VALUE", help=f"{text} [default: {shown}]")
    parser = argparse.ArgumentParser(prog="navmorph", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command][0](settings)
    except (ConfigError, UsageError, FormatError) as exc:
        print(f"navmorph {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NavMorphError as exc:
        print(f"navmorph {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
