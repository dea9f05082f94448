"""
Hierarchical Graph-based Network
Encodes a partial cloud to a global feature, decodes a coarse complete cloud and builds the refinement seed
"""

import logging
from typing import Tuple

import torch
import torch.nn as nn

from config.config import HGNetConfig
from src.exceptions import ArgumentError
from src.geometry import aggregate_downsample
from src.nn_core import POOLING_LAYERS, EdgeConv, LayerSpec, SharedMLP, global_max_avg_pool

logger = logging.getLogger("FBNet.hgnet")


class HGNet(nn.Module):
    """EdgeConv and pooling layers alternate, then three FC layers predict the coarse cloud"""

    def __init__(self, cfg: HGNetConfig = HGNetConfig(), fps_start: int = 0):
        super().__init__()
        self.cfg = cfg
        self.fps_start = fps_start

        self.edgeconvs = nn.ModuleList()
        self.pools = nn.ModuleList()
        in_channels = 3
        pooling = POOLING_LAYERS[cfg.pooling]
        for i, out_channels in enumerate(cfg.edgeconv_dims):
            self.edgeconvs.append(EdgeConv(LayerSpec(in_channels, out_channels, k=cfg.k)))
            if i < len(cfg.adaptgp_rates):
                self.pools.append(pooling(out_channels, cfg.adaptgp_rates[i], k=cfg.k))
            in_channels = out_channels

        self.decoder = SharedMLP((cfg.global_dim,) + tuple(cfg.fc_dims), activation="relu")

    def encode(self, partial: torch.Tensor) -> torch.Tensor:
        """
        Encode a partial cloud

        Args:
            partial: (B, N, 3) observed points, N >= k

        Returns:
            (B, 1, 2 * edgeconv_dims[-1]) global feature, max half first
        """
        if partial.dim() != 3 or partial.shape[-1] != 3:
            raise ArgumentError(f"expected a (B, N, 3) partial cloud, got {tuple(partial.shape)}")
        if partial.shape[1] < self.cfg.k:
            raise ArgumentError(f"partial cloud has {partial.shape[1]} points, fewer than k={self.cfg.k}")

        points, features = partial, None
        for i, conv in enumerate(self.edgeconvs):
            # deeper stages may hold fewer points than k
            features = conv(points, features, k=min(self.cfg.k, points.shape[1]))
            if i < len(self.pools):
                points, features = self.pools[i](points, features)
        return global_max_avg_pool(features)

    def decode(self, global_feature: torch.Tensor) -> torch.Tensor:
        """Map the global feature to a (B, coarse_size, 3) cloud"""
        if global_feature.shape[-1] != self.cfg.global_dim:
            raise ArgumentError(
                f"global feature has width {global_feature.shape[-1]}, expected {self.cfg.global_dim}"
            )
        flat = global_feature.reshape(global_feature.shape[0], -1)
        return self.decoder(flat).reshape(-1, self.cfg.coarse_size, 3)

    def coarse_seed(self, partial: torch.Tensor, coarse: torch.Tensor) -> torch.Tensor:
        """FPS over partial + coarse down to the first block's input size"""
        total = partial.shape[-2] + coarse.shape[-2]
        if total < self.cfg.seed_size:
            raise ArgumentError(f"{total} merged points cannot yield a seed of {self.cfg.seed_size}")
        return aggregate_downsample(partial, coarse, self.cfg.seed_size, self.fps_start)

    def forward(self, partial: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        coarse = self.decode(self.encode(partial))
        return coarse, self.coarse_seed(partial, coarse)
