"""
FBNet orchestrator
Runs HGNet once, unrolls the three weight-shared FBAC blocks over time steps,
initializes every block's input and computes the total training loss
"""

import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import torch
import torch.nn as nn

from config.config import CHECKPOINT_VERSION, FBNetConfig
from src.exceptions import ArgumentError, CheckpointError, StateError
from src.fbac import FBACBlock, FeedbackState
from src.geometry import aggregate_downsample
from src.hgnet import HGNet
from src.metrics import chamfer_l2

logger = logging.getLogger("FBNet.model")


class InitStrategy(Enum):
    """
    Input initialization of the FBAC blocks

    First block: "seed" keeps the HGNet seed (P_c + P_part) at every step,
    "feedback" aggregates the partial input with its own previous output at t > 0.
    Other blocks: "ff" takes the previous block's output as is, "ff_part"
    aggregates it with the partial input, "ff_fb" aggregates it with the
    block's own previous output.
    """

    A = ("seed", "ff")
    B = ("seed", "ff_part")
    C = ("feedback", "ff")
    D = ("feedback", "ff_fb")
    E = ("feedback", "ff_part")

    @property
    def first_block(self) -> str:
        return self.value[0]

    @property
    def other_blocks(self) -> str:
        return self.value[1]


@dataclass
class UnrollTrace:
    """Coarse cloud, seed and every block output, indexed outputs[t][i]"""

    coarse: torch.Tensor
    seed: torch.Tensor
    outputs: List[List[torch.Tensor]] = field(default_factory=list)

    @property
    def time_steps(self) -> int:
        return len(self.outputs)

    @property
    def final(self) -> torch.Tensor:
        return self.outputs[-1][-1]

    def step_final(self, t: int) -> torch.Tensor:
        """Last block's output at step t"""
        return self.outputs[t][-1]

    def flat(self) -> List[torch.Tensor]:
        return [p for step in self.outputs for p in step]

    def __len__(self) -> int:
        return sum(len(step) for step in self.outputs)


def fbnet_init_input(
    block_index: int,
    t: int,
    partial: torch.Tensor,
    coarse_seed: Optional[torch.Tensor],
    prev_ff: Optional[torch.Tensor],
    prev_fb: Optional[torch.Tensor],
    target_size: int,
    strategy: InitStrategy = InitStrategy.E,
    start: int = 0,
) -> torch.Tensor:
    """
    Build the input cloud of block `block_index` at step `t`

    Args:
        partial: Observed points
        coarse_seed: HGNet seed (P_c + P_part reduced by FPS)
        prev_ff: Output of block i-1 at this step (feedforward points)
        prev_fb: Output of this block at step t-1 (feedback points)
        target_size: Cardinality of the initialized input
        strategy: Table of first/other block initializations

    Returns:
        The initialized input cloud
    """
    if block_index == 0:
        if t == 0 or strategy.first_block == "seed":
            if coarse_seed is None:
                raise StateError(f"block 0 at step {t} needs the coarse seed")
            return coarse_seed
        if prev_fb is None:
            raise StateError(f"block 0 at step {t} needs its own output from step {t - 1}")
        return aggregate_downsample(partial, prev_fb, target_size, start)

    if prev_ff is None:
        raise StateError(f"block {block_index} at step {t} needs block {block_index - 1}'s output")
    mode = strategy.other_blocks
    if mode == "ff":
        return prev_ff
    if mode == "ff_part":
        return aggregate_downsample(partial, prev_ff, target_size, start)
    # ff_fb: nothing to aggregate before the first feedback exists
    if t == 0:
        return prev_ff
    if prev_fb is None:
        raise StateError(f"block {block_index} at step {t} needs its own output from step {t - 1}")
    return aggregate_downsample(prev_ff, prev_fb, target_size, start)


class FBNet(nn.Module):
    """HGNet followed by three FBAC blocks shared across every time step"""

    def __init__(self, cfg: FBNetConfig = FBNetConfig()):
        super().__init__()
        self.cfg = cfg
        self.strategy = InitStrategy[cfg.init_strategy]
        self.hgnet = HGNet(cfg.hgnet, fps_start=cfg.fps_start)
        self.blocks = nn.ModuleList([FBACBlock(cfg.block_config(i)) for i in range(len(cfg.ratios))])

    def forward(self, partial: torch.Tensor, time_steps: Optional[int] = None) -> UnrollTrace:
        """
        Unroll the refinement

        Args:
            partial: (B, N, 3) observed points
            time_steps: Override of cfg.time_steps (evaluation of a trained model)

        Returns:
            UnrollTrace with every block output of every step
        """
        steps = self.cfg.time_steps if time_steps is None else time_steps
        if steps < 1:
            raise ArgumentError(f"time_steps must be >= 1, got {steps}")

        coarse, seed = self.hgnet(partial)
        trace = UnrollTrace(coarse=coarse, seed=seed)
        states: List[Optional[FeedbackState]] = [None] * len(self.blocks)
        previous: Optional[List[torch.Tensor]] = None

        for t in range(steps):
            outputs: List[torch.Tensor] = []
            for i, block in enumerate(self.blocks):
                target = self.cfg.seed_size if i == 0 else outputs[i - 1].shape[1]
                p_in = fbnet_init_input(
                    i,
                    t,
                    partial,
                    seed,
                    prev_ff=outputs[i - 1] if i > 0 else None,
                    prev_fb=previous[i] if previous is not None else None,
                    target_size=target,
                    strategy=self.strategy,
                    start=self.cfg.fps_start,
                )
                feedback = states[i] if self.cfg.feedback else None
                p_out, states[i] = block(p_in, feedback)
                outputs.append(p_out)
            trace.outputs.append(outputs)
            previous = outputs
        return trace


def fbnet_forward(partial: torch.Tensor, model: FBNet, time_steps: Optional[int] = None) -> UnrollTrace:
    return model(partial, time_steps)


def fbnet_loss(trace: UnrollTrace, gt: torch.Tensor) -> torch.Tensor:
    """CD(P_c, gt) plus the CD of every block output at every step, averaged over the batch"""
    if gt.shape[-2] == 0:
        raise ArgumentError("ground truth cloud is empty")
    loss = chamfer_l2(trace.coarse, gt)
    for output in trace.flat():
        loss = loss + chamfer_l2(output, gt)
    return loss.mean()


def count_parameters(module: nn.Module) -> int:
    """Number of learnable scalars"""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def save_checkpoint(
    path,
    model: FBNet,
    train_config: Optional[Dict] = None,
    optimizer: Optional[torch.optim.Optimizer] = None,
    epoch: int = 0,
    best_val_cd: Optional[float] = None,
) -> None:
    """Write the versioned checkpoint container"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "train_config": dict(train_config or {}),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": int(epoch),
        "best_val_cd": best_val_cd,
    }
    tmp_path = f"{path}.tmp"
    torch.save(payload, tmp_path)
    os.replace(tmp_path, path)
    logger.info(f"Checkpoint written to {path} (epoch {epoch})")


def load_checkpoint(path) -> Dict:
    """
    Read a checkpoint container

    Returns:
        The payload dict; raises CheckpointError when it is missing, unreadable
        or carries another version header
    """
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {str(e)}")
    version = payload.get("version") if isinstance(payload, dict) else None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {version!r}, expected {CHECKPOINT_VERSION!r}"
        )
    return payload


def model_from_checkpoint(payload: Dict) -> FBNet:
    """Rebuild an FBNet from a loaded checkpoint payload"""
    try:
        cfg = FBNetConfig.from_dict(payload["model_config"])
        model = FBNet(cfg)
        model.load_state_dict(payload["model_state"])
    except (KeyError, TypeError, RuntimeError) as e:
        raise CheckpointError(f"checkpoint content does not match the network: {str(e)}")
    return model
