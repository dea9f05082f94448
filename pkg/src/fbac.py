"""
Feedback-Aware Completion block
Feature extraction, feedback exploitation, feature expansion and coordinate generation
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn as nn

from config.config import FbacConfig
from src.exceptions import ArgumentError
from src.geometry import duplicate, merge, merge_features
from src.nn_core import CrossTransformer, EdgeConv, LayerSpec, NodeShuffle, SharedMLP


@dataclass(frozen=True)
class FeedbackState:
    """A block's output points and the expanded features that produced them, from the previous step"""

    points: torch.Tensor
    features: torch.Tensor

    def __post_init__(self):
        if self.points.shape[:-1] != self.features.shape[:-1]:
            raise ArgumentError(
                f"feedback points {tuple(self.points.shape)} and features {tuple(self.features.shape)} are not aligned"
            )

    @property
    def channels(self) -> int:
        return self.features.shape[-1]


class FBACBlock(nn.Module):
    """
    Refine and upsample a cloud r times

    p_out = duplicate(p_in, r) + head(shuffle(cross(p_in, G(p_in), feedback), r))
    """

    def __init__(self, cfg: FbacConfig = FbacConfig()):
        super().__init__()
        self.cfg = cfg
        channels = cfg.channels
        self.extractor = EdgeConv(LayerSpec(3, channels, k=cfg.k))
        self.cross = CrossTransformer(channels, k=cfg.k)
        self.shuffle = NodeShuffle(channels, cfg.r, k=cfg.k)
        self.head = SharedMLP((channels, cfg.head_hidden, 3), activation="relu")
        # an untrained block is an exact duplicating upsampler
        nn.init.zeros_(self.head.last_linear.weight)
        nn.init.zeros_(self.head.last_linear.bias)

    def forward(self, p_in: torch.Tensor, feedback: Optional[FeedbackState] = None) -> Tuple[torch.Tensor, FeedbackState]:
        if p_in.shape[1] < self.cfg.k:
            raise ArgumentError(f"block input has {p_in.shape[1]} points, fewer than k={self.cfg.k}")
        features = self.extractor(p_in)

        if feedback is None:
            refined = self.cross.self_attention(p_in, features)
        else:
            if feedback.channels != self.cfg.channels:
                raise ArgumentError(
                    f"feedback features have {feedback.channels} channels, block uses {self.cfg.channels}"
                )
            p_b = merge(p_in, feedback.points)
            f_b = merge_features(features, feedback.features)
            refined = self.cross(p_in, features, p_b, f_b)

        expanded = self.shuffle(p_in, refined)
        p_out = duplicate(p_in, self.cfg.r) + self.head(expanded)
        return p_out, FeedbackState(points=p_out, features=expanded)


def fbac_forward(p_in: torch.Tensor, feedback: Optional[FeedbackState], block: FBACBlock):
    return block(p_in, feedback)
