"""
Differentiable building blocks
Shared MLPs, EdgeConv, Adaptive Graph Pooling and its baselines, the point Cross
Transformer, NodeShuffle expansion and global max+avg pooling

All layers take channels-last batches: points (B, N, 3), features (B, N, C).
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.exceptions import ArgumentError
from src.geometry import fps, index_points, knn_indices, outermost_point

ACTIVATIONS = ("relu", "leaky_relu", "none")


@dataclass(frozen=True)
class LayerSpec:
    """Dimensions of one learnable layer"""

    in_channels: int
    out_channels: int
    hidden: Tuple[int, ...] = ()
    k: int = 16
    activation: str = "leaky_relu"

    def __post_init__(self):
        dims = (self.in_channels, self.out_channels, self.k) + tuple(self.hidden)
        if any(int(d) < 1 for d in dims):
            raise ArgumentError(f"layer dimensions must be positive integers, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation '{self.activation}'")


def _activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU()
    if name == "leaky_relu":
        return nn.LeakyReLU(negative_slope=0.2)
    return nn.Identity()


def _check_batch(points: torch.Tensor, features: Optional[torch.Tensor] = None):
    if points.dim() != 3 or points.shape[-1] != 3:
        raise ArgumentError(f"expected points of shape (B, N, 3), got {tuple(points.shape)}")
    if features is not None and (features.dim() != 3 or features.shape[:2] != points.shape[:2]):
        raise ArgumentError(
            f"features {tuple(features.shape)} are not aligned with points {tuple(points.shape)}"
        )


class SharedMLP(nn.Module):
    """The same MLP applied to every point (last axis)"""

    def __init__(self, dims: Sequence[int], activation: str = "relu", final_activation: bool = False):
        super().__init__()
        if len(dims) < 2:
            raise ArgumentError("a shared MLP needs at least input and output widths")
        self.dims = tuple(int(d) for d in dims)
        layers = []
        for i in range(len(self.dims) - 1):
            layers.append(nn.Linear(self.dims[i], self.dims[i + 1]))
            if i < len(self.dims) - 2 or final_activation:
                layers.append(_activation(activation))
        self.net = nn.Sequential(*layers)

    @property
    def in_channels(self) -> int:
        return self.dims[0]

    @property
    def out_channels(self) -> int:
        return self.dims[-1]

    @property
    def last_linear(self) -> nn.Linear:
        return [m for m in self.net if isinstance(m, nn.Linear)][-1]

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.in_channels:
            raise ArgumentError(f"expected {self.in_channels} input channels, got {features.shape[-1]}")
        return self.net(features)


def shared_mlp(features: torch.Tensor, mlp: SharedMLP) -> torch.Tensor:
    return mlp(features)


class EdgeConv(nn.Module):
    """
    Graph convolution on a kNN graph over the companion coordinates

    Edge feature h([f_i, f_j - f_i]) through a shared MLP, max-aggregated over the k neighbors.
    """

    def __init__(self, spec: LayerSpec):
        super().__init__()
        self.spec = spec
        self.k = spec.k
        self.mlp = SharedMLP(
            (2 * spec.in_channels,) + tuple(spec.hidden) + (spec.out_channels,),
            activation=spec.activation,
            final_activation=True,
        )

    def forward(self, points: torch.Tensor, features: Optional[torch.Tensor] = None, k: Optional[int] = None) -> torch.Tensor:
        # first-layer use: raw coordinates are the features
        if features is None:
            features = points
        _check_batch(points, features)
        if features.shape[-1] != self.spec.in_channels:
            raise ArgumentError(f"EdgeConv expects {self.spec.in_channels} channels, got {features.shape[-1]}")
        idx = knn_indices(points, points, self.k if k is None else k)
        neighbors = index_points(features, idx)
        center = features.unsqueeze(2).expand_as(neighbors)
        edges = torch.cat([center, neighbors - center], dim=-1)
        return self.mlp(edges).max(dim=2).values


def edgeconv(points: torch.Tensor, features: Optional[torch.Tensor], layer: EdgeConv, k: Optional[int] = None) -> torch.Tensor:
    return layer(points, features, k)


def _pooled_centers(points: torch.Tensor, pool_rate: int, k: int):
    n = points.shape[1]
    m = math.ceil(n / pool_rate)
    # sampling from the outermost point keeps pooling independent of input order
    centers = fps(points, m, outermost_point(points))
    idx = knn_indices(index_points(points, centers), points, min(k, n))
    return centers, idx


class AdaptiveGraphPooling(nn.Module):
    """
    Learned pooling by attention over the neighbors of FPS centers

    The relation (f_i - f_j) + K(p_i - p_j) feeds two heads: a scalar head
    weighting neighbor coordinates and a per-channel head weighting neighbor
    features. Softmax runs over the k neighbors, so every pooled point is a
    convex combination of real input points.
    """

    def __init__(self, channels: int, pool_rate: int, k: int = 16, hidden: Tuple[int, ...] = ()):
        super().__init__()
        if pool_rate < 1:
            raise ArgumentError(f"pool_rate must be >= 1, got {pool_rate}")
        self.channels = channels
        self.pool_rate = pool_rate
        self.k = k
        self.position = SharedMLP((3,) + tuple(hidden) + (channels,), activation="relu")
        self.point_head = SharedMLP((channels,) + tuple(hidden) + (1,), activation="relu")
        self.feature_head = SharedMLP((channels,) + tuple(hidden) + (channels,), activation="relu")

    def forward(self, points: torch.Tensor, features: torch.Tensor, return_weights: bool = False):
        _check_batch(points, features)
        centers, idx = _pooled_centers(points, self.pool_rate, self.k)
        p_i = index_points(points, centers).unsqueeze(2)
        f_i = index_points(features, centers).unsqueeze(2)
        p_j = index_points(points, idx)
        f_j = index_points(features, idx)

        relation = (f_i - f_j) + self.position(p_i - p_j)
        point_weights = torch.softmax(self.point_head(relation), dim=2)
        feature_weights = torch.softmax(self.feature_head(relation), dim=2)

        pooled_points = (point_weights * p_j).sum(dim=2)
        pooled_features = (feature_weights * f_j).sum(dim=2)
        if return_weights:
            return pooled_points, pooled_features, (point_weights, feature_weights, idx)
        return pooled_points, pooled_features


def adaptgp(points: torch.Tensor, features: torch.Tensor, layer: AdaptiveGraphPooling):
    return layer(points, features)


class PointPooling(nn.Module):
    """FPS-centroid pooling: keep the sampled centers, max-pool neighbor features"""

    def __init__(self, channels: int, pool_rate: int, k: int = 16):
        super().__init__()
        if pool_rate < 1:
            raise ArgumentError(f"pool_rate must be >= 1, got {pool_rate}")
        self.channels = channels
        self.pool_rate = pool_rate
        self.k = k

    def forward(self, points: torch.Tensor, features: torch.Tensor):
        _check_batch(points, features)
        centers, idx = _pooled_centers(points, self.pool_rate, self.k)
        return index_points(points, centers), index_points(features, idx).max(dim=2).values


class GraphPooling(nn.Module):
    """FPS centers with features max-pooled over learned edge features of the center graph"""

    def __init__(self, channels: int, pool_rate: int, k: int = 16):
        super().__init__()
        if pool_rate < 1:
            raise ArgumentError(f"pool_rate must be >= 1, got {pool_rate}")
        self.channels = channels
        self.pool_rate = pool_rate
        self.k = k
        self.edge = SharedMLP((2 * channels, channels), activation="leaky_relu", final_activation=True)

    def forward(self, points: torch.Tensor, features: torch.Tensor):
        _check_batch(points, features)
        centers, idx = _pooled_centers(points, self.pool_rate, self.k)
        f_i = index_points(features, centers).unsqueeze(2)
        f_j = index_points(features, idx)
        edges = torch.cat([f_i.expand_as(f_j), f_j - f_i], dim=-1)
        return index_points(points, centers), self.edge(edges).max(dim=2).values


POOLING_LAYERS = {
    "adaptgp": AdaptiveGraphPooling,
    "point": PointPooling,
    "graph": GraphPooling,
}


class CrossTransformer(nn.Module):
    """
    Vector attention from a query set A to a reference set B

    f'_a = sum_b softmax(M(f_a - f_b + d)) * (f_b + d),  d = W(p_a - p_b),
    softmax over the k neighbors independently per channel. With B = A it is
    a point-transformer self-attention layer.
    """

    def __init__(self, channels: int, k: int = 16):
        super().__init__()
        self.channels = channels
        self.k = k
        self.position = SharedMLP((3, channels, channels), activation="relu")
        self.attention = SharedMLP((channels, channels, channels), activation="relu")

    def _attend(self, pa, fa, pb, fb, idx):
        p_b = index_points(pb, idx)
        f_b = index_points(fb, idx)
        delta = self.position(pa.unsqueeze(2) - p_b)
        logits = self.attention(fa.unsqueeze(2) - f_b + delta)
        weights = torch.softmax(logits, dim=2)
        return (weights * (f_b + delta)).sum(dim=2), weights

    def forward(self, pa: torch.Tensor, fa: torch.Tensor, pb: torch.Tensor, fb: torch.Tensor, return_weights: bool = False):
        _check_batch(pa, fa)
        _check_batch(pb, fb)
        if fa.shape[-1] != self.channels or fb.shape[-1] != self.channels:
            raise ArgumentError(
                f"Cross Transformer expects {self.channels} channels, got {fa.shape[-1]} and {fb.shape[-1]}"
            )
        if self.k > pb.shape[1]:
            raise ArgumentError(f"k={self.k} neighbors requested from {pb.shape[1]} reference points")
        out, weights = self._attend(pa, fa, pb, fb, knn_indices(pa, pb, self.k))
        return (out, weights) if return_weights else out

    def self_attention(self, points: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        """Point-transformer evaluation: every point attends to its own neighborhood"""
        _check_batch(points, features)
        if features.shape[-1] != self.channels:
            raise ArgumentError(f"Cross Transformer expects {self.channels} channels, got {features.shape[-1]}")
        if self.k > points.shape[1]:
            raise ArgumentError(f"k={self.k} neighbors requested from {points.shape[1]} points")
        idx = knn_indices(points, points, self.k)
        out, _ = self._attend(points, features, points, features, idx)
        return out


def cross_transformer(pa, fa, pb, fb, layer: CrossTransformer) -> torch.Tensor:
    return layer(pa, fa, pb, fb)


def shuffle_rows(features: torch.Tensor, r: int) -> torch.Tensor:
    """
    Rearrange (B, N, r*C) into (B, r*N, C), point-major

    Row i*r + j holds channel group j of input point i, the same layout
    geometry.duplicate produces.
    """
    if r < 1:
        raise ArgumentError(f"shuffle ratio must be >= 1, got {r}")
    batch, n, channels = features.shape
    if channels % r:
        raise ArgumentError(f"{channels} channels cannot be split into {r} groups")
    return features.reshape(batch, n * r, channels // r)


class NodeShuffle(nn.Module):
    """Expand features r times: EdgeConv, channel growth C -> r*C, then row shuffle"""

    def __init__(self, channels: int, r: int, k: int = 16):
        super().__init__()
        if r < 1:
            raise ArgumentError(f"upsampling ratio must be >= 1, got {r}")
        self.channels = channels
        self.r = r
        self.k = k
        self.graph = EdgeConv(LayerSpec(channels, channels, k=k))
        self.expand = SharedMLP((channels, r * channels))

    def forward(self, points: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        _check_batch(points, features)
        grown = self.expand(self.graph(points, features))
        return shuffle_rows(grown, self.r)


def nodeshuffle(points: torch.Tensor, features: torch.Tensor, layer: NodeShuffle) -> torch.Tensor:
    return layer(points, features)


def global_max_avg_pool(features: torch.Tensor) -> torch.Tensor:
    """Channel-wise [max, mean] over all rows: (…, N, C) -> (…, 1, 2C)"""
    if features.shape[-2] == 0:
        raise ArgumentError("cannot pool an empty feature map")
    pooled_max = features.max(dim=-2, keepdim=True).values
    pooled_avg = features.mean(dim=-2, keepdim=True)
    return torch.cat([pooled_max, pooled_avg], dim=-1)
