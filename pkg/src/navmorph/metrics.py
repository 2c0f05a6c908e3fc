"""Episode-level navigation metrics and their dataset-level aggregation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from navmorph.errors import DomainError, UsageError
from navmorph.losses import ndtw

METRIC_FIELDS = ("tl", "ne", "sr", "osr", "spl", "ndtw", "sdtw")


@dataclass
class Trajectory:
    positions: np.ndarray
    reference: np.ndarray
    goal: np.ndarray
    shortest_path_length: float
    success_threshold: float = 0.5

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.reference = np.asarray(self.reference, dtype=np.float64).reshape(-1, 2)
        self.goal = np.asarray(self.goal, dtype=np.float64).reshape(2)
        if len(self.positions) == 0:
            raise UsageError("trajectory has no positions")
        if len(self.reference) == 0:
            raise UsageError("trajectory has no reference path")
        if not self.shortest_path_length > 0:
            raise DomainError("shortest_path_length must be positive")
        if not self.success_threshold > 0:
            raise DomainError("success_threshold must be positive")


@dataclass
class MetricReport:
    tl: float
    ne: float
    sr: float
    osr: float
    spl: float
    ndtw: float
    sdtw: float

    def as_dict(self) -> dict:
        return asdict(self)


def path_length(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    seg = np.diff(points, axis=0)
    return math.fsum(np.sqrt((seg * seg).sum(axis=1)).tolist())


def evaluate(traj: Trajectory) -> MetricReport:
    pos = traj.positions
    tl = path_length(pos)
    dists = np.sqrt(((pos - traj.goal) ** 2).sum(axis=1))
    ne = float(dists[-1])
    sr = 1.0 if ne <= traj.success_threshold else 0.0
    osr = 1.0 if float(dists.min()) <= traj.success_threshold else 0.0
    spl = sr * traj.shortest_path_length / max(tl, traj.shortest_path_length)
    fidelity = ndtw(traj.reference, pos, traj.success_threshold)
    return MetricReport(tl, ne, sr, osr, spl, fidelity, sr * fidelity)


def aggregate(reports) -> MetricReport:
    reports = list(reports)
    if not reports:
        raise UsageError("cannot aggregate an empty report list")
    return MetricReport(*(
        math.fsum(getattr(r, f) for r in reports) / len(reports) for f in METRIC_FIELDS
    ))


def reports_to_csv(rows: list[tuple[str, MetricReport]]) -> str:
    """One CSV row per (label, report); values use ``repr`` so they round-trip."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("episode_id", *METRIC_FIELDS))
    for label, rep in rows:
        writer.writerow((label, *(repr(float(getattr(rep, f))) for f in METRIC_FIELDS)))
    return buf.getvalue()


def report_from_mapping(row: dict) -> MetricReport:
    return MetricReport(**{f.name: float(row[f.name]) for f in fields(MetricReport)})
