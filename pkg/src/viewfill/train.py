"""Training loop: deterministic optimization with history and checkpoints.

Determinism contract: given the same config (including the seed) and the
same dataset, two runs produce identical initialization, batch order and
loss history. Resuming from the latest checkpoint continues with the same
batch-order stream (the shuffle RNG is replayed up to the resume epoch) and
continuous epoch numbering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from viewfill.checkpoint import (
    Checkpoint,
    checkpoint_from_model,
    load_checkpoint,
    load_into_model,
)
from viewfill.config import PipelineConfig, config_hash
from viewfill.errors import ConfigError, InvalidInputError, TrainingDivergedError
from viewfill.evaluate import evaluate_samples, mean_cd, mean_f1
from viewfill.losses import LossSchedule, alpha_at, total_loss
from viewfill.model import AblationVariant, CompletionModel

HISTORY_HEADER = "epoch,alpha,train_loss,val_cd,val_f1"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    alpha: float
    train_loss: float
    val_cd: float
    val_f1: float

    def to_csv_row(self) -> str:
        return (
            f"{self.epoch},{self.alpha:.12g},{self.train_loss:.12g},"
            f"{self.val_cd:.12g},{self.val_f1:.12g}"
        )


@dataclass
class TrainResult:
    history: list
    best_path: Path
    last_path: Path
    best_val_cd: float


def _tensorize(samples, dtype=torch.float32):
    images = torch.stack(
        [torch.from_numpy(s.image.transpose(2, 0, 1)).to(dtype) for s in samples]
    )
    partials = torch.stack(
        [torch.from_numpy(s.partial.points).to(dtype) for s in samples]
    )
    gts = torch.stack([torch.from_numpy(s.gt.points).to(dtype) for s in samples])
    seeds = np.array([s.seed for s in samples], dtype=np.int64)
    return images, partials, gts, seeds


def _optimizer_extras(model, optimizer):
    extras = {}
    for i, p in enumerate(model.parameters()):
        state = optimizer.state.get(p)
        if not state:
            continue
        extras[f"opt.{i}.step"] = np.array(
            [float(state["step"])], dtype=np.float64
        )
        extras[f"opt.{i}.exp_avg"] = state["exp_avg"].detach().numpy().copy()
        extras[f"opt.{i}.exp_avg_sq"] = state["exp_avg_sq"].detach().numpy().copy()
    return extras


def _restore_optimizer(model, optimizer, extras):
    if not extras:
        return
    sd = optimizer.state_dict()
    state = {}
    for i, _ in enumerate(model.parameters()):
        key = f"opt.{i}.exp_avg"
        if key not in extras:
            continue
        state[i] = {
            "step": torch.tensor(float(extras[f"opt.{i}.step"][0])),
            "exp_avg": torch.from_numpy(extras[f"opt.{i}.exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(extras[f"opt.{i}.exp_avg_sq"].copy()),
        }
    sd["state"] = state
    optimizer.load_state_dict(sd)


def _read_history(path) -> list:
    records = []
    if not Path(path).is_file():
        return records
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line == HISTORY_HEADER:
                continue
            epoch, alpha, train_loss, val_cd, val_f1 = line.split(",")
            records.append(
                EpochRecord(
                    epoch=int(epoch),
                    alpha=float(alpha),
                    train_loss=float(train_loss),
                    val_cd=float(val_cd),
                    val_f1=float(val_f1),
                )
            )
    return records


def _write_history(path, records) -> None:
    with open(path, "w") as f:
        f.write(HISTORY_HEADER + "\n")
        for record in records:
            f.write(record.to_csv_row() + "\n")


def train(
    config: PipelineConfig,
    train_samples,
    val_samples,
    variant: AblationVariant = AblationVariant.FULL,
    out_dir=None,
    resume: bool = False,
    log=None,
) -> TrainResult:
    """Optimize a model on the given samples; returns history and checkpoint paths.

    Writes ``history.csv``, ``last.ckpt`` (every epoch, carries optimizer
    state for resume) and ``best.ckpt`` (each validation-CD improvement)
    under ``out_dir``.
    """
    if not train_samples:
        raise InvalidInputError("training split is empty")
    if not val_samples:
        raise InvalidInputError("validation split is empty")
    out_dir = Path(out_dir) if out_dir is not None else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    history_path = out_dir / "history.csv"
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"

    tc = config.train
    schedule = LossSchedule(tc.alpha_start, tc.alpha_end, tc.epochs)

    start_epoch = 0
    best_val = math.inf
    history = []
    resumed_extras = {}
    if resume and last_path.is_file():
        ckpt = load_checkpoint(last_path)
        if config_hash(ckpt.config) != config_hash(config):
            raise ConfigError(
                "resume config does not match the checkpointed config"
            )
        if ckpt.variant is not variant:
            raise ConfigError(
                f"resume variant {variant.value!r} does not match "
                f"checkpoint variant {ckpt.variant.value!r}"
            )
        model = CompletionModel(config, variant)
        load_into_model(model, ckpt)
        start_epoch = ckpt.epoch + 1
        best_val = float(ckpt.meta.get("best_val_cd", math.inf))
        resumed_extras = ckpt.extras
        history = [r for r in _read_history(history_path) if r.epoch < start_epoch]
        _write_history(history_path, history)
    else:
        torch.manual_seed(tc.seed)
        model = CompletionModel(config, variant)
        _write_history(history_path, [])

    optimizer = torch.optim.Adam(model.parameters(), lr=tc.lr)
    _restore_optimizer(model, optimizer, resumed_extras)

    images, partials, gts, seeds = _tensorize(train_samples)
    n = len(train_samples)

    # replay the shuffle stream so resumed runs see the same batch order
    shuffle_rng = np.random.default_rng(tc.seed)
    for _ in range(start_epoch):
        shuffle_rng.permutation(n)

    for epoch in range(start_epoch, tc.epochs):
        # cosine learning-rate decay per epoch
        lr_now = tc.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / tc.epochs))
        for group in optimizer.param_groups:
            group["lr"] = lr_now
        alpha = variant.effective_alpha(alpha_at(schedule, epoch))

        model.train()
        perm = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for batch_index, start in enumerate(range(0, n, tc.batch_size)):
            idx = perm[start : start + tc.batch_size]
            out = model(images[idx], partials[idx], seeds[idx])
            loss, _ = total_loss(out.coarse, out.refined, gts[idx], alpha)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, batch_index)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            optimizer.step()
            loss_sum += value * len(idx)
        train_loss = loss_sum / n

        val_results = evaluate_samples(
            model, val_samples, tc.tau, batch_size=tc.batch_size
        )
        record = EpochRecord(
            epoch=epoch,
            alpha=alpha,
            train_loss=train_loss,
            val_cd=mean_cd(val_results),
            val_f1=mean_f1(val_results),
        )
        history.append(record)
        with open(history_path, "a") as f:
            f.write(record.to_csv_row() + "\n")

        improved = record.val_cd < best_val
        if improved:
            best_val = record.val_cd
        meta = {"best_val_cd": best_val, "n_train": n}
        extras = _optimizer_extras(model, optimizer)
        save = checkpoint_from_model(model, epoch, extras=extras, meta=meta)
        _atomic_save(last_path, save)
        if improved:
            _atomic_save(best_path, Checkpoint(
                config=save.config,
                variant=save.variant,
                epoch=save.epoch,
                params=save.params,
                extras={},
                meta=meta,
            ))
        if log is not None:
            log(
                f"epoch {epoch:4d}  alpha {record.alpha:.3f}  "
                f"loss {record.train_loss:.6f}  val_cd {record.val_cd:.6f}  "
                f"val_f1 {record.val_f1:.4f}"
            )

    return TrainResult(
        history=history,
        best_path=best_path,
        last_path=last_path,
        best_val_cd=best_val,
    )


def _atomic_save(path, ckpt) -> None:
    from viewfill.checkpoint import save_checkpoint

    tmp = Path(str(path) + ".tmp")
    save_checkpoint(tmp, ckpt)
    tmp.replace(path)
