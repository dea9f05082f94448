"""
Distance metrics between point sets
Chamfer L2/L1, F-score, Fidelity and Minimal Matching Distance, plus the CSV metric report
"""

import math
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence

import pandas as pd
import torch

from config.config import MetricConfig
from src.exceptions import ArgumentError

METRIC_COLUMNS = ["run_id", "resolution", "cd_l2", "cd_l1", "f1", "tau", "fidelity", "mmd"]


def _prepare(p1: torch.Tensor, p2: torch.Tensor):
    if p1.dim() != p2.dim() or p1.dim() not in (2, 3):
        raise ArgumentError(f"incompatible cloud shapes {tuple(p1.shape)} and {tuple(p2.shape)}")
    if p1.shape[-2] == 0 or p2.shape[-2] == 0:
        raise ArgumentError("metrics are undefined for empty point clouds")
    unbatched = p1.dim() == 2
    if unbatched:
        p1, p2 = p1.unsqueeze(0), p2.unsqueeze(0)
    if p1.shape[0] != p2.shape[0]:
        raise ArgumentError(f"batch sizes differ: {p1.shape[0]} vs {p2.shape[0]}")
    return p1, p2, unbatched


def _squared_distances(p1: torch.Tensor, p2: torch.Tensor) -> torch.Tensor:
    # difference-based so that identical points are exactly zero apart
    return torch.cdist(p1, p2, compute_mode="donot_use_mm_for_euclid_dist") ** 2


def _nearest(p1: torch.Tensor, p2: torch.Tensor):
    """Squared nearest-neighbor distances in both directions, (B, N1) and (B, N2)"""
    dist = _squared_distances(p1, p2)
    # min keeps the first minimizer, which receives the gradient
    d12 = dist.min(dim=2).values
    d21 = dist.min(dim=1).values
    return d12, d21


def _finish(values: torch.Tensor, unbatched: bool) -> torch.Tensor:
    return values[0] if unbatched else values


def chamfer_l2(p1: torch.Tensor, p2: torch.Tensor) -> torch.Tensor:
    """
    Squared Chamfer distance, the training loss

    mean_x min_y |x-y|^2 + mean_y min_x |y-x|^2, unhalved. Batched inputs give
    one value per sample.
    """
    p1, p2, unbatched = _prepare(p1, p2)
    d12, d21 = _nearest(p1, p2)
    return _finish(d12.mean(dim=1) + d21.mean(dim=1), unbatched)


def chamfer_l1(p1: torch.Tensor, p2: torch.Tensor, halved: bool = MetricConfig.CD_L1_HALVED) -> torch.Tensor:
    """
    Chamfer distance on unsquared distances

    Args:
        p1, p2: Point clouds
        halved: Average the two directions (the PCN convention) instead of summing them

    Returns:
        Per-sample L1 Chamfer distance
    """
    p1, p2, unbatched = _prepare(p1, p2)
    d12, d21 = _nearest(p1, p2)
    total = d12.sqrt().mean(dim=1) + d21.sqrt().mean(dim=1)
    if halved:
        total = 0.5 * total
    return _finish(total, unbatched)


def fscore(pred: torch.Tensor, gt: torch.Tensor, tau: float = MetricConfig.FSCORE_TAU) -> torch.Tensor:
    """
    F-score at distance threshold tau

    Precision counts predicted points strictly closer than tau to the ground
    truth, recall the reverse; the score is 0 when both are 0.
    """
    if tau <= 0:
        raise ArgumentError(f"F-score threshold must be positive, got {tau}")
    pred, gt, unbatched = _prepare(pred, gt)
    with torch.no_grad():
        d12, d21 = _nearest(pred.double(), gt.double())
        threshold = float(tau) ** 2
        precision = (d12 < threshold).double().mean(dim=1)
        recall = (d21 < threshold).double().mean(dim=1)
        denom = precision + recall
        f1 = torch.where(denom > 0, 2 * precision * recall / denom.clamp_min(1e-300), torch.zeros_like(denom))
    return _finish(f1, unbatched)


def fidelity(partial_input: torch.Tensor, completion: torch.Tensor) -> torch.Tensor:
    """Mean squared distance from every observed point to the completion"""
    partial_input, completion, unbatched = _prepare(partial_input, completion)
    d12 = _squared_distances(partial_input, completion).min(dim=2).values
    return _finish(d12.mean(dim=1), unbatched)


def mmd(completion: torch.Tensor, reference_set: Sequence[torch.Tensor]) -> torch.Tensor:
    """Chamfer L2 from a completion to its best-matching reference shape"""
    references = list(reference_set)
    if not references:
        raise ArgumentError("minimal matching distance needs a non-empty reference set")
    distances = torch.stack([chamfer_l2(completion, ref) for ref in references])
    return distances.min(dim=0).values


@dataclass
class MetricReport:
    """One row of a metric CSV"""

    run_id: str
    resolution: int
    cd_l2: Optional[float] = None
    cd_l1: Optional[float] = None
    f1: Optional[float] = None
    tau: float = MetricConfig.FSCORE_TAU
    fidelity: Optional[float] = None
    mmd: Optional[float] = None

    def __post_init__(self):
        for name in ("cd_l2", "cd_l1", "f1", "fidelity", "mmd"):
            value = getattr(self, name)
            if value is None:
                continue
            value = float(value)
            if not math.isfinite(value) or value < 0:
                raise ArgumentError(f"{name} must be finite and non-negative, got {value}")
            setattr(self, name, value)
        if self.f1 is not None and self.f1 > 1:
            raise ArgumentError(f"f1 must lie in [0, 1], got {self.f1}")
        if self.tau <= 0:
            raise ArgumentError(f"tau must be positive, got {self.tau}")

    def to_row(self) -> dict:
        return asdict(self)


def write_metric_reports(reports: Iterable[MetricReport], path) -> pd.DataFrame:
    """Write reports as CSV with a header and the fixed column order"""
    frame = pd.DataFrame([r.to_row() for r in reports], columns=METRIC_COLUMNS)
    frame.to_csv(path, index=False, encoding="utf-8")
    return frame


def read_metric_reports(path) -> List[MetricReport]:
    frame = pd.read_csv(path, encoding="utf-8")
    if list(frame.columns) != METRIC_COLUMNS:
        raise ArgumentError(f"{path}: expected columns {METRIC_COLUMNS}, got {list(frame.columns)}")
    reports = []
    for row in frame.to_dict(orient="records"):
        row = {key: (None if isinstance(value, float) and math.isnan(value) else value) for key, value in row.items()}
        row["run_id"] = str(row["run_id"])
        row["resolution"] = int(row["resolution"])
        reports.append(MetricReport(**row))
    return reports
