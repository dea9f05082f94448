"""
Geometric kernels for point clouds
Farthest point sampling, kNN graphs, merging and duplication used by every network stage

Clouds are (N, 3) tensors or (B, N, 3) batches. Distances are always evaluated
in double precision from coordinate differences, so ties behave the same at
every model precision.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import torch

from src.exceptions import ArgumentError


@dataclass(frozen=True)
class NeighborGraph:
    """Directed kNN edges from query points to reference points"""

    k: int
    # (..., N, k) reference indices, ascending distance, ties by ascending index
    edges: torch.Tensor

    def __len__(self) -> int:
        return self.edges.shape[-2]


def _batched(cloud: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    if cloud.dim() == 2:
        return cloud.unsqueeze(0), True
    if cloud.dim() == 3:
        return cloud, False
    raise ArgumentError(f"expected a (N, C) or (B, N, C) tensor, got shape {tuple(cloud.shape)}")


def pairwise_distances(queries: torch.Tensor, references: torch.Tensor) -> torch.Tensor:
    """Euclidean distances (B, N, M) in float64, computed from coordinate differences"""
    return torch.cdist(
        queries.detach().double(),
        references.detach().double(),
        compute_mode="donot_use_mm_for_euclid_dist",
    )


def index_points(values: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """
    Gather rows of a batched tensor

    Args:
        values: (B, N, C) tensor
        idx: (B, S) or (B, S, K) indices into N

    Returns:
        (B, S, C) or (B, S, K, C) gathered rows
    """
    raw_size = idx.shape
    flat = idx.reshape(raw_size[0], -1)
    gathered = torch.gather(values, 1, flat[..., None].expand(-1, -1, values.shape[-1]))
    return gathered.reshape(*raw_size, values.shape[-1])


def outermost_point(cloud: torch.Tensor) -> torch.Tensor:
    """
    Index of the point farthest from the centroid, independent of point order

    Distances equal up to rounding of the centroid count as ties, which go to
    the lexicographically smallest coordinates.

    Args:
        cloud: (N, 3) or (B, N, 3) coordinates

    Returns:
        () or (B,) LongTensor
    """
    points, unbatched = _batched(cloud)
    if points.shape[1] == 0:
        raise ArgumentError("an empty cloud has no outermost point")
    points = points.detach().double()
    dist = ((points - points.mean(dim=1, keepdim=True)) ** 2).sum(-1)
    farthest = dist.max(dim=-1, keepdim=True).values
    candidates = dist >= farthest * (1.0 - 1e-12)
    for axis in range(points.shape[-1]):
        coord = points[..., axis].masked_fill(~candidates, float("inf"))
        candidates &= coord == coord.min(dim=-1, keepdim=True).values
    # argmax returns the first True
    picked = torch.argmax(candidates.long(), dim=-1)
    return picked[0] if unbatched else picked


def fps(cloud: torch.Tensor, m: int, start: Union[int, torch.Tensor] = 0) -> torch.Tensor:
    """
    Farthest point sampling

    Each pick maximizes the minimum distance to the points already selected;
    ties go to the smallest index.

    Args:
        cloud: (N, 3) or (B, N, 3) coordinates
        m: Number of points to select, 1 <= m <= N
        start: Index of the first selected point, or a (B,) tensor of per-cloud indices

    Returns:
        (m,) or (B, m) LongTensor of distinct indices in selection order
    """
    points, unbatched = _batched(cloud)
    batch, n, _ = points.shape
    if not 1 <= m <= n:
        raise ArgumentError(f"cannot sample {m} points from a cloud of {n}")
    if isinstance(start, torch.Tensor):
        current = start.to(device=points.device, dtype=torch.long).reshape(-1).clone()
        if current.numel() != batch:
            raise ArgumentError(f"expected {batch} start indices, got {current.numel()}")
        if ((current < 0) | (current >= n)).any():
            raise ArgumentError(f"start indices outside [0, {n})")
    else:
        if not 0 <= start < n:
            raise ArgumentError(f"start index {start} outside [0, {n})")
        current = torch.full((batch,), start, dtype=torch.long, device=points.device)

    points = points.detach().double()
    selected = torch.empty(batch, m, dtype=torch.long, device=points.device)
    min_dist = torch.full((batch, n), float("inf"), dtype=torch.float64, device=points.device)
    rows = torch.arange(batch, device=points.device)

    for i in range(m):
        selected[:, i] = current
        last = points[rows, current].unsqueeze(1)
        dist = ((points - last) ** 2).sum(-1)
        min_dist = torch.minimum(min_dist, dist)
        # selected points never come back, even when the rest coincide with them
        min_dist[rows, current] = -1.0
        # argmax returns the first maximal index
        current = torch.argmax(min_dist, dim=-1)

    return selected[0] if unbatched else selected


def knn_indices(queries: torch.Tensor, references: torch.Tensor, k: int) -> torch.Tensor:
    """Indices (…, N, k) of the k nearest references of every query, sorted"""
    q, unbatched = _batched(queries)
    r, _ = _batched(references)
    if q.shape[0] != r.shape[0]:
        raise ArgumentError(f"batch sizes differ: {q.shape[0]} queries vs {r.shape[0]} references")
    if not 1 <= k <= r.shape[1]:
        raise ArgumentError(f"k={k} neighbors requested from {r.shape[1]} reference points")

    dist = pairwise_distances(q, r)
    # stable sort keeps ascending index order among equal distances
    order = torch.sort(dist, dim=-1, stable=True).indices[..., :k]
    return order[0] if unbatched else order


def knn_graph(queries: torch.Tensor, references: torch.Tensor, k: int) -> NeighborGraph:
    """kNN graph from queries into references; a point is its own first neighbor when both sets coincide"""
    return NeighborGraph(k=k, edges=knn_indices(queries, references, k))


def merge(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Concatenate two clouds along the point axis, a first"""
    if a.dim() != b.dim() or a.shape[-1] != b.shape[-1]:
        raise ArgumentError(f"cannot merge shapes {tuple(a.shape)} and {tuple(b.shape)}")
    if a.dim() == 3 and a.shape[0] != b.shape[0]:
        raise ArgumentError(f"batch sizes differ: {a.shape[0]} vs {b.shape[0]}")
    return torch.cat([a, b], dim=-2)


def merge_features(fa: torch.Tensor, fb: torch.Tensor) -> torch.Tensor:
    """Paired feature merge; channel counts must match"""
    if fa.shape[-1] != fb.shape[-1]:
        raise ArgumentError(f"feature channel mismatch: {fa.shape[-1]} vs {fb.shape[-1]}")
    return merge(fa, fb)


def aggregate_downsample(keep: torch.Tensor, refine: torch.Tensor, target: int, start: int = 0) -> torch.Tensor:
    """
    Merge two clouds and reduce the union to `target` points with FPS

    Gradients reach the selected coordinates only.
    """
    merged = merge(keep, refine)
    idx = fps(merged, target, start)
    if merged.dim() == 2:
        return merged[idx]
    return index_points(merged, idx)


def duplicate(cloud: torch.Tensor, r: int) -> torch.Tensor:
    """Repeat every point r times, point-major: point i fills slots i*r ... i*r+r-1"""
    if r < 1:
        raise ArgumentError(f"duplication ratio must be >= 1, got {r}")
    return torch.repeat_interleave(cloud, r, dim=-2)
