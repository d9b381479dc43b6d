"""Displacement metrics over agent subsets.

All single-scene functions take ``pred`` and ``gt`` of shape ``[M, T, 2]``
and a subset given as a boolean mask or integer indices over the agents.
Dataset-level numbers are the mean of per-scene values, each scene
weighted equally; scenes where a subset is empty are skipped for it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ContractError, DimensionError
from .model import Role

__all__ = [
    "MetricsReport",
    "SubsetMetrics",
    "ade",
    "displacement_errors",
    "fde",
    "format_table",
    "max_err",
    "mr",
    "report_row",
    "summarize",
]

MISS_THRESHOLD_M = 1.0
TABLE_COLUMNS = ("Model", "Task", "Predict(P)", "ADE_P", "ADE_ball", "MaxErr_P", "FDE_P", "MR_P")


def _subset_index(subset, m: int) -> np.ndarray:
    if subset is None:
        return np.arange(m)
    subset = np.asarray(subset)
    if subset.dtype == bool:
        if subset.shape != (m,):
            raise DimensionError(f"subset mask has shape {subset.shape}, expected ({m},)")
        idx = np.flatnonzero(subset)
    else:
        idx = subset.astype(np.int64).reshape(-1)
    if idx.size == 0:
        raise ContractError("metric requested over an empty agent subset")
    return idx


def displacement_errors(pred, gt, subset=None) -> np.ndarray:
    """Euclidean error per (agent, frame) for the selected agents ``[|S|, T]``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise DimensionError(f"pred {pred.shape} and gt {gt.shape} must both be [M, T, 2]")
    idx = _subset_index(subset, pred.shape[0])
    return np.linalg.norm(pred[idx] - gt[idx], axis=-1)


def ade(pred, gt, subset=None) -> float:
    """Mean error over the subset's agents and all predicted frames."""
    return float(displacement_errors(pred, gt, subset).mean())


def fde(pred, gt, subset=None) -> float:
    """Mean over the subset of the error at the final frame."""
    return float(displacement_errors(pred, gt, subset)[:, -1].mean())


def max_err(pred, gt, subset=None) -> float:
    """Mean over the subset of each agent's worst per-frame error."""
    return float(displacement_errors(pred, gt, subset).max(axis=1).mean())


def mr(pred, gt, subset=None, threshold: float = MISS_THRESHOLD_M) -> float:
    """Percentage of (agent, frame) errors strictly greater than ``threshold``."""
    return float(100.0 * np.mean(displacement_errors(pred, gt, subset) > threshold))


@dataclass
class SubsetMetrics:
    ade_m: float
    fde_m: float
    maxerr_m: float
    mr_percent: float
    sequences: int
    agents: int


@dataclass
class MetricsReport:
    """Metrics per named subset; ``predicted`` is the scored set P."""

    subsets: dict[str, SubsetMetrics] = field(default_factory=dict)
    model: str = ""
    task: str = ""
    predict_label: str = ""

    def __getitem__(self, name: str) -> SubsetMetrics:
        return self.subsets[name]

    def __contains__(self, name: str) -> bool:
        return name in self.subsets

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "task": self.task,
            "predict": self.predict_label,
            "subsets": {k: asdict(v) for k, v in self.subsets.items()},
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(
            subsets={k: SubsetMetrics(**v) for k, v in data["subsets"].items()},
            model=data.get("model", ""),
            task=data.get("task", ""),
            predict_label=data.get("predict", ""),
        )


def _subset_masks(roles, behaviors, predicted) -> dict[str, np.ndarray]:
    roles = np.asarray(roles)
    masks = {
        "predicted": predicted,
        "all": np.ones_like(predicted),
        "players": roles != Role.BALL,
        "ball": roles == Role.BALL,
        "offense": roles == Role.OFFENSE,
        "defense": roles == Role.DEFENSE,
    }
    if behaviors is not None:
        behaviors = np.asarray(behaviors)
        for code, name in enumerate("SLA"):
            masks[name] = behaviors == code
    # Conditioning agents are never scored.
    return {k: v & predicted for k, v in masks.items()}


def summarize(preds, gts, roles, predicted, behaviors=None, unit_scale: float = 1.0,
              model: str = "", task: str = "", predict_label: str = "") -> MetricsReport:
    """Dataset-level report from stacked predictions ``[N, M, T, 2]``.

    ``unit_scale`` converts coordinate units to meters (1.0 for metric data;
    the normalisation half-extent for normalised data).
    """
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape or preds.ndim != 4:
        raise DimensionError(f"preds {preds.shape} and gts {gts.shape} must both be [N, M, T, 2]")
    predicted = np.asarray(predicted, dtype=bool)
    err = np.linalg.norm(preds - gts, axis=-1) * unit_scale  # [N, M, T]
    per_ade = err.mean(axis=-1)
    per_fde = err[..., -1]
    per_max = err.max(axis=-1)
    per_miss = (err > MISS_THRESHOLD_M).mean(axis=-1)
    report = MetricsReport(model=model, task=task, predict_label=predict_label)
    for name, mask in _subset_masks(roles, behaviors, predicted).items():
        counts = mask.sum(axis=1)
        keep = counts > 0
        if not np.any(keep):
            continue
        c = counts[keep]

        def seq_mean(values):
            return float(np.mean((values * mask).sum(axis=1)[keep] / c))

        report.subsets[name] = SubsetMetrics(
            ade_m=seq_mean(per_ade),
            fde_m=seq_mean(per_fde),
            maxerr_m=seq_mean(per_max),
            mr_percent=100.0 * seq_mean(per_miss),
            sequences=int(keep.sum()),
            agents=int(c.sum()),
        )
    return report


def report_row(report: MetricsReport) -> dict[str, str]:
    p = report["predicted"]
    ball = report.subsets.get("ball")
    return {
        "Model": report.model,
        "Task": report.task,
        "Predict(P)": report.predict_label,
        "ADE_P": f"{p.ade_m:.2f}",
        "ADE_ball": f"{ball.ade_m:.2f}" if ball is not None else "-",
        "MaxErr_P": f"{p.maxerr_m:.2f}",
        "FDE_P": f"{p.fde_m:.2f}",
        "MR_P": f"{p.mr_percent:.2f}",
    }


def format_table(reports) -> str:
    """Plain-text table with one row per report."""
    rows = [report_row(r) for r in reports]
    widths = {c: max([len(c)] + [len(r[c]) for r in rows]) for c in TABLE_COLUMNS}
    line = "  ".join(c.ljust(widths[c]) for c in TABLE_COLUMNS)
    rule = "  ".join("-" * widths[c] for c in TABLE_COLUMNS)
    body = ["  ".join(r[c].ljust(widths[c]) for c in TABLE_COLUMNS) for r in rows]
    return "\n".join([line, rule, *body])
