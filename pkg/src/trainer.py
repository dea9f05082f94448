"""
FBNet training and evaluation
Seeded training loop, per-time-step evaluation, ablation suites and inference helpers
"""

import logging
import os
import random
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from matplotlib.figure import Figure
from torch.optim.lr_scheduler import StepLR

from config.config import FBNetConfig, MetricConfig, PathConfig, TrainConfig
from src.data import CompletionDataset, DatasetManifest, make_loader, read_xyz, write_xyz
from src.exceptions import ArgumentError, ConfigError, DataError
from src.fbnet import FBNet, count_parameters, fbnet_loss, load_checkpoint, model_from_checkpoint, save_checkpoint
from src.metrics import MetricReport, chamfer_l1, chamfer_l2, fidelity, fscore, mmd

logger = logging.getLogger("FBNet.trainer")

HISTORY_COLUMNS = ["epoch", "lr", "train_loss", "val_cd_l2", "val_cd_l1", "val_f1"]
PER_SHAPE_COLUMNS = ["id", "time_step", "cd_l2", "cd_l1", "f1", "fidelity", "mmd"]
ABLATION_COLUMNS = ["suite", "variant", "time_steps", "feedback", "init_strategy", "pooling", "cd_l2", "cd_l1", "f1"]

# suite -> [(variant name, TrainConfig overrides)]
ABLATION_SUITES: Dict[str, List] = {
    "feedback": [
        ("T1-off", dict(time_steps=1, feedback=False)),
        ("T2-off", dict(time_steps=2, feedback=False)),
        ("T3-off", dict(time_steps=3, feedback=False)),
        ("T2-on", dict(time_steps=2, feedback=True)),
        ("T3-on", dict(time_steps=3, feedback=True)),
    ],
    "init_strategy": [(name, dict(init_strategy=name)) for name in ("A", "B", "C", "D", "E")],
    "pooling": [(name, dict(pooling=name)) for name in ("adaptgp", "point", "graph")],
}


@dataclass
class TrainResult:
    checkpoint: str
    history_csv: str
    history: pd.DataFrame
    best_val_cd: Optional[float]


@dataclass
class EvaluationResult:
    """One MetricReport per time step plus the per-shape table"""

    reports: List[MetricReport]
    per_shape: pd.DataFrame

    def final(self) -> MetricReport:
        return self.reports[-1]


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def resolve_device(name: str) -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    try:
        return torch.device(name)
    except RuntimeError as e:
        raise ConfigError(f"invalid device '{name}': {str(e)}")


def resolve_dtype(precision: str) -> torch.dtype:
    return torch.float64 if precision == "float64" else torch.float32


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Step-decayed learning rate of a 1-indexed epoch"""
    if epoch < 1:
        raise ArgumentError(f"epochs are 1-indexed, got {epoch}")
    return cfg.learning_rate * cfg.decay_factor ** ((epoch - 1) // cfg.decay_every)


def pick_split(manifest: DatasetManifest, preferred: Sequence[str]) -> str:
    """First split of `preferred` that holds entries"""
    for tag in preferred:
        if manifest.has_split(tag):
            return tag
    raise DataError(f"manifest has none of the splits {list(preferred)}")


def check_resolution(net_cfg: FBNetConfig, manifest: DatasetManifest, split: str) -> None:
    resolution = manifest.resolution_for(split)
    if resolution != net_cfg.resolution:
        raise ConfigError(
            f"{split} split has resolution {resolution}, the network produces {net_cfg.resolution} points"
        )


class Trainer:
    """Trains one FBNet configuration on a manifest and keeps the best validation checkpoint"""

    def __init__(self, cfg: TrainConfig, manifest: DatasetManifest, output_dir, network: Optional[FBNetConfig] = None):
        self.cfg = cfg
        self.net_cfg = cfg.network(network)
        self.manifest = manifest
        self.output_dir = str(output_dir)
        self.device = resolve_device(cfg.device)
        self.dtype = resolve_dtype(cfg.precision)
        self.logger = logger

        if not manifest.has_split("train"):
            raise DataError("manifest has no train split")
        self.val_split = pick_split(manifest, ("val", "train"))
        if self.val_split == "train":
            self.logger.warning("No validation split; selecting the checkpoint on the train split")
        check_resolution(self.net_cfg, manifest, "train")
        check_resolution(self.net_cfg, manifest, self.val_split)

    def build(self):
        set_seed(self.cfg.seed)
        model = FBNet(self.net_cfg).to(device=self.device, dtype=self.dtype)
        optimizer = torch.optim.Adam(
            model.parameters(),
            lr=self.cfg.learning_rate,
            betas=(self.cfg.beta1, self.cfg.beta2),
        )
        scheduler = StepLR(optimizer, step_size=self.cfg.decay_every, gamma=self.cfg.decay_factor)
        return model, optimizer, scheduler

    def _batch(self, batch: Dict):
        partial = batch["partial"].to(device=self.device, dtype=self.dtype)
        complete = batch["complete"].to(device=self.device, dtype=self.dtype)
        return partial, complete

    def train_epoch(self, model: FBNet, optimizer, loader) -> float:
        model.train()
        total, count = 0.0, 0
        for batch in loader:
            partial, complete = self._batch(batch)
            optimizer.zero_grad()
            loss = fbnet_loss(model(partial), complete)
            loss.backward()
            optimizer.step()
            total += loss.item() * partial.shape[0]
            count += partial.shape[0]
        return total / max(count, 1)

    @torch.no_grad()
    def validate(self, model: FBNet, loader) -> Dict[str, float]:
        """Mean metrics of the final completion"""
        model.eval()
        sums = {"cd_l2": 0.0, "cd_l1": 0.0, "f1": 0.0}
        count = 0
        for batch in loader:
            partial, complete = self._batch(batch)
            final = model(partial).final
            sums["cd_l2"] += chamfer_l2(final, complete).sum().item()
            sums["cd_l1"] += chamfer_l1(final, complete).sum().item()
            sums["f1"] += fscore(final, complete, self.cfg.tau).sum().item()
            count += partial.shape[0]
        return {key: value / max(count, 1) for key, value in sums.items()}

    def fit(self) -> TrainResult:
        os.makedirs(self.output_dir, exist_ok=True)
        model, optimizer, scheduler = self.build()
        train_loader = make_loader(
            CompletionDataset(self.manifest, "train"),
            batch_size=self.cfg.batch_size,
            shuffle=True,
            seed=self.cfg.seed,
            num_workers=self.cfg.num_workers,
        )
        val_loader = make_loader(
            CompletionDataset(self.manifest, self.val_split),
            batch_size=self.cfg.batch_size,
            shuffle=False,
            seed=self.cfg.seed,
            num_workers=self.cfg.num_workers,
        )

        checkpoint_path = os.path.join(self.output_dir, PathConfig.CHECKPOINT_NAME)
        history_path = os.path.join(self.output_dir, PathConfig.HISTORY_NAME)
        self.logger.info(
            f"Training {count_parameters(model)} parameters for {self.cfg.epochs} epochs "
            f"(profile {self.cfg.profile}, T={self.net_cfg.time_steps}, feedback={self.net_cfg.feedback}, "
            f"init {self.net_cfg.init_strategy}, pooling {self.net_cfg.hgnet.pooling}, device {self.device})"
        )

        rows = []
        best = None
        for epoch in range(1, self.cfg.epochs + 1):
            lr = optimizer.param_groups[0]["lr"]
            train_loss = self.train_epoch(model, optimizer, train_loader)
            scheduler.step()
            val = self.validate(model, val_loader)
            rows.append([epoch, lr, train_loss, val["cd_l2"], val["cd_l1"], val["f1"]])
            # rewrite every epoch so an interrupted run keeps its curve
            pd.DataFrame(rows, columns=HISTORY_COLUMNS).to_csv(history_path, index=False, encoding="utf-8")

            if best is None or val["cd_l2"] < best:
                best = val["cd_l2"]
                save_checkpoint(
                    checkpoint_path,
                    model,
                    train_config=self.cfg.to_dict(),
                    optimizer=optimizer,
                    epoch=epoch,
                    best_val_cd=best,
                )
            self.logger.info(
                f"Epoch {epoch}/{self.cfg.epochs}: lr {lr:.2e}, loss {train_loss:.6f}, "
                f"val CD-L2 {val['cd_l2']:.6f}, CD-L1 {val['cd_l1']:.6f}, F1 {val['f1']:.4f}"
            )

        history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
        return TrainResult(checkpoint=checkpoint_path, history_csv=history_path, history=history, best_val_cd=best)


def train(cfg: TrainConfig, manifest: DatasetManifest, output_dir, network: Optional[FBNetConfig] = None) -> TrainResult:
    """
    Train FBNet on the manifest's train split

    Args:
        cfg: Training configuration; its profile selects the architecture
        manifest: Dataset with a train split (and optionally val)
        output_dir: Receives best.ckpt and history.csv
        network: Custom base network used instead of the profile; cfg overrides still apply

    Returns:
        TrainResult with the checkpoint path and the per-epoch history
    """
    return Trainer(cfg, manifest, output_dir, network).fit()


def _reference_set(manifest: DatasetManifest, split: str, dtype: torch.dtype) -> List[torch.Tensor]:
    """Distinct complete shapes MMD compares against"""
    tag = "train" if manifest.has_split("train") else split
    paths = sorted({entry.complete for entry in manifest.split(tag)})
    return [torch.as_tensor(read_xyz(manifest.resolve(p)), dtype=dtype) for p in paths]


@torch.no_grad()
def evaluate_model(
    model: FBNet,
    manifest: DatasetManifest,
    split: str,
    time_steps: int,
    tau: float = MetricConfig.FSCORE_TAU,
    run_id: str = "eval",
    batch_size: int = 8,
    with_mmd: bool = True,
) -> EvaluationResult:
    """Metrics of the final completion of every time step"""
    if not 1 <= time_steps <= MetricConfig.MAX_EVAL_TIME_STEPS:
        raise ConfigError(f"time_steps must lie in [1, {MetricConfig.MAX_EVAL_TIME_STEPS}], got {time_steps}")
    check_resolution(model.cfg, manifest, split)

    parameter = next(model.parameters())
    device, dtype = parameter.device, parameter.dtype
    references = [ref.to(device) for ref in _reference_set(manifest, split, dtype)] if with_mmd else []
    loader = make_loader(CompletionDataset(manifest, split), batch_size=batch_size, shuffle=False, seed=0)

    model.eval()
    rows = []
    for batch in loader:
        partial = batch["partial"].to(device=device, dtype=dtype)
        complete = batch["complete"].to(device=device, dtype=dtype)
        trace = model(partial, time_steps)
        for t in range(time_steps):
            pred = trace.step_final(t)
            metrics = {
                "cd_l2": chamfer_l2(pred, complete),
                "cd_l1": chamfer_l1(pred, complete),
                "f1": fscore(pred, complete, tau),
                "fidelity": fidelity(partial, pred),
            }
            if references:
                metrics["mmd"] = mmd(pred, [ref.expand(pred.shape[0], -1, -1) for ref in references])
            for b, shape_id in enumerate(batch["id"]):
                row = {"id": shape_id, "time_step": t + 1}
                row.update({key: float(value[b]) for key, value in metrics.items()})
                rows.append(row)

    per_shape = pd.DataFrame(rows, columns=PER_SHAPE_COLUMNS)
    reports = []
    for t in range(1, time_steps + 1):
        step = per_shape[per_shape["time_step"] == t]
        reports.append(
            MetricReport(
                run_id=f"{run_id}-t{t}",
                resolution=model.cfg.resolution,
                cd_l2=step["cd_l2"].mean(),
                cd_l1=step["cd_l1"].mean(),
                f1=step["f1"].mean(),
                tau=tau,
                fidelity=step["fidelity"].mean(),
                mmd=step["mmd"].mean() if with_mmd else None,
            )
        )
    return EvaluationResult(reports=reports, per_shape=per_shape)


def _load_model(checkpoint) -> FBNet:
    payload = load_checkpoint(checkpoint)
    model = model_from_checkpoint(payload)
    precision = (payload.get("train_config") or {}).get("precision", "float32")
    return model.to(dtype=resolve_dtype(precision))


def evaluate(
    checkpoint,
    manifest: DatasetManifest,
    split: str = "test",
    time_steps: Optional[int] = None,
    tau: float = MetricConfig.FSCORE_TAU,
    run_id: Optional[str] = None,
    with_mmd: bool = True,
) -> EvaluationResult:
    """
    Evaluate a checkpoint on one split of a manifest

    Args:
        checkpoint: Path written by train(); only read
        split: Manifest split to evaluate
        time_steps: Unroll length, at most 4; defaults to the trained value
        tau: F-score threshold
        run_id: Report prefix; every step's report gets a -t{step} suffix

    Returns:
        EvaluationResult with one report per time step
    """
    model = _load_model(checkpoint)
    steps = model.cfg.time_steps if time_steps is None else time_steps
    if run_id is None:
        run_id = os.path.splitext(os.path.basename(str(checkpoint)))[0]
    if not manifest.has_split(split):
        raise DataError(f"manifest has no '{split}' split")
    logger.info(f"Evaluating {checkpoint} on {len(manifest.split(split))} {split} pairs, T={steps}")
    result = evaluate_model(model, manifest, split, steps, tau=tau, run_id=run_id, with_mmd=with_mmd)
    for report in result.reports:
        logger.info(f"{report.run_id}: CD-L2 {report.cd_l2:.6f}, CD-L1 {report.cd_l1:.6f}, F1 {report.f1:.4f}")
    return result


def ablate(
    suite: str,
    cfg: TrainConfig,
    manifest: DatasetManifest,
    output_dir,
    network: Optional[FBNetConfig] = None,
) -> pd.DataFrame:
    """
    Train and evaluate every variant of one ablation suite

    Returns:
        One row per variant, also written to <output_dir>/ablation_<suite>.csv
    """
    if suite not in ABLATION_SUITES:
        raise ArgumentError(f"unknown ablation suite '{suite}'; choose one of {sorted(ABLATION_SUITES)}")
    os.makedirs(output_dir, exist_ok=True)
    eval_split = pick_split(manifest, ("test", "val", "train"))

    rows = []
    for variant, overrides in ABLATION_SUITES[suite]:
        variant_cfg = replace(cfg, **overrides)
        net_cfg = variant_cfg.network(network)
        logger.info(f"Ablation {suite}/{variant}")
        result = train(variant_cfg, manifest, os.path.join(output_dir, suite, variant), network)
        model = _load_model(result.checkpoint)
        final = evaluate_model(
            model,
            manifest,
            eval_split,
            net_cfg.time_steps,
            tau=cfg.tau,
            run_id=f"{suite}-{variant}",
            batch_size=cfg.batch_size,
            with_mmd=False,
        ).final()
        rows.append(
            [
                suite,
                variant,
                net_cfg.time_steps,
                net_cfg.feedback,
                net_cfg.init_strategy,
                net_cfg.hgnet.pooling,
                final.cd_l2,
                final.cd_l1,
                final.f1,
            ]
        )

    frame = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    frame.to_csv(os.path.join(output_dir, f"ablation_{suite}.csv"), index=False, encoding="utf-8")
    return frame


@torch.no_grad()
def complete(checkpoint, input_xyz, output_xyz, time_steps: Optional[int] = None) -> np.ndarray:
    """Complete one partial cloud file with a trained checkpoint"""
    model = _load_model(checkpoint)
    model.eval()
    dtype = next(model.parameters()).dtype
    partial = torch.as_tensor(read_xyz(input_xyz), dtype=dtype).unsqueeze(0)
    result = model(partial, time_steps).final[0]
    write_xyz(result, output_xyz)
    logger.info(f"Completed {input_xyz} ({partial.shape[1]} points) into {output_xyz} ({result.shape[0]} points)")
    return result.double().numpy()


def report_params(checkpoint=None, profile: Optional[str] = None) -> int:
    """Learnable parameter count of a checkpoint, or of a profile when no checkpoint is given"""
    if checkpoint is not None:
        model = model_from_checkpoint(load_checkpoint(checkpoint))
    else:
        model = FBNet(TrainConfig(profile=profile or "2048").network())
    return count_parameters(model)


def plot_history(history_csv, out_png) -> str:
    """Loss and validation curves of a training run"""
    history = pd.read_csv(history_csv, encoding="utf-8")
    missing = [c for c in HISTORY_COLUMNS if c not in history.columns]
    if missing:
        raise DataError(f"{history_csv}: missing history columns {missing}")

    fig = Figure(figsize=(10, 4), dpi=100)
    ax = fig.add_subplot(121)
    ax.plot(history["epoch"], history["train_loss"], "b-", label="train loss")
    ax.plot(history["epoch"], history["val_cd_l2"], "r-", label="val CD-L2")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_title("Chamfer distance")
    ax.legend()
    ax.grid(True, alpha=0.3)

    ax = fig.add_subplot(122)
    ax.plot(history["epoch"], history["val_f1"], "g-", label="val F1")
    ax.set_xlabel("epoch")
    ax.set_ylim(0, 1)
    ax.set_title("F-score")
    ax.grid(True, alpha=0.3)

    fig.savefig(out_png, bbox_inches="tight")
    logger.info(f"Learning curves written to {out_png}")
    return str(out_png)
