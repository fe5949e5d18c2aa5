"""Seeded batch training over triplet files with resumable checkpoints.

Each epoch reshuffles the triplets with a generator keyed (seed, epoch),
so the batch sequence is a pure function of the config; resuming from a
checkpoint replays the exact remaining schedule and lands on the same
bytes as an uninterrupted run.  In-batch negatives only: within a batch,
every other triplet's target is the negative set.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigMismatch, ValidationError
from .model import DEFAULT_TAU, ModelConfig, ComposedQueryModel, batch_classification_loss, load_checkpoint, save_checkpoint
from .rng import HashRng


@dataclass
class TrainingConfig:
    model: ModelConfig
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    tau: float = DEFAULT_TAU
    encoder_lr: float = 1e-6
    head_lr: float = 1e-4
    weight_decay: float = 0.01
    checkpoint_interval: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.batch_size == 1:
            warnings.warn("batch_size 1 makes the contrastive loss identically zero",
                          stacklevel=2)
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.tau <= 0.0:
            raise ValidationError("tau must be positive")

    def to_dict(self) -> dict:
        blob = asdict(self)
        blob["model"] = self.model.to_dict()
        return blob

    @classmethod
    def from_dict(cls, blob: dict) -> "TrainingConfig":
        blob = dict(blob)
        blob["model"] = ModelConfig.from_dict(blob["model"])
        return cls(**blob)


def parse_config_file(path) -> dict:
    """key = value lines with dotted nesting; '#' starts a comment."""
    flat: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{line_number}: expected 'key = value'")
            key, _, value = line.partition("=")
            flat[key.strip()] = value.strip()
    nested: dict = {}
    for key, value in flat.items():
        node = nested
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


def config_from_mapping(blob: dict) -> TrainingConfig:
    """Build a TrainingConfig from a (possibly all-string) nested mapping."""
    model_blob = dict(blob.get("model", {}))
    model = ModelConfig(
        dim=int(model_blob.get("dim", 32)),
        fusion_layers=int(model_blob.get("fusion_layers", 2)),
        heads=int(model_blob.get("heads", 8)),
        variant=str(model_blob.get("variant", "full")),
        finetune=str(model_blob.get("finetune", "freeze")),
    )
    def pick(name, cast, default):
        return cast(blob[name]) if name in blob else default
    return TrainingConfig(
        model=model,
        batch_size=pick("batch_size", int, 32),
        epochs=pick("epochs", int, 20),
        seed=pick("seed", int, 0),
        tau=pick("tau", float, DEFAULT_TAU),
        encoder_lr=pick("encoder_lr", float, 1e-6),
        head_lr=pick("head_lr", float, 1e-4),
        weight_decay=pick("weight_decay", float, 0.01),
        checkpoint_interval=pick("checkpoint_interval", int, 0),
    )


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    steps: int = 0
    wall_time: float = 0.0
    checkpoint_path: str = ""


def make_batches(triplets, batch_size: int, seed: int, epoch: int) -> list[list]:
    """Per-epoch shuffle keyed (seed, epoch); the final short batch is dropped."""
    if not triplets:
        raise ValidationError("no triplets to batch")
    order = HashRng(seed, "batch", epoch).shuffled(range(len(triplets)))
    batches = []
    for start in range(0, len(order) - batch_size + 1, batch_size):
        batches.append([triplets[i] for i in order[start:start + batch_size]])
    return batches


def _validate_ids(triplets, encoders):
    resolvable = getattr(encoders, "resolvable", None)
    if resolvable is None:
        return
    for t in triplets:
        for image_id in (t.ref_id, t.target_id):
            if not resolvable(image_id):
                raise ValidationError(f"triplet references unknown image id {image_id}")


def _batch_loss(model: ComposedQueryModel, batch, tau: float):
    queries = nc.concat([model.compose_query(t.ref_id, t.relative_caption) for t in batch], axis=0)
    targets = nc.concat([model.target_feature(t.target_id) for t in batch], axis=0)
    return batch_classification_loss(queries, targets, tau)


def _lr_of(config: TrainingConfig, encoders):
    encoder_names = set(encoders.text_param_names) | set(encoders.image_param_names)

    def lr(name: str) -> float:
        return config.encoder_lr if name in encoder_names else config.head_lr

    return lr


def _adam_extra(state: nc.AdamWState) -> dict[str, np.ndarray]:
    extra = {"adam.step": np.array(float(state.step))}
    for name, arr in state.m.items():
        extra[f"adam.m/{name}"] = arr
    for name, arr in state.v.items():
        extra[f"adam.v/{name}"] = arr
    return extra


def _write_checkpoint(path, model, state, config, step, total_steps):
    meta = {
        "training": _training_meta(config),
        "step": step,
        "total_steps": total_steps,
    }
    save_checkpoint(path, model, extra=_adam_extra(state), meta=meta)


def _training_meta(config: TrainingConfig) -> dict:
    blob = config.to_dict()
    blob.pop("model")
    return blob


def _run(model, state, config, triplets, out_path, start_step, stop_after_steps=None):
    """Steps [start_step, total) of the deterministic schedule."""
    n_batches = len(triplets) // config.batch_size
    total_steps = config.epochs * n_batches
    report = TrainReport(checkpoint_path=str(out_path))
    began = time.monotonic()
    epoch_sums: dict[int, list] = {}
    step = start_step
    stop_at = total_steps if stop_after_steps is None else min(total_steps, start_step + stop_after_steps)
    for epoch in range(config.epochs):
        if (epoch + 1) * n_batches <= step:
            continue  # epoch fully consumed before resume point
        batches = make_batches(triplets, config.batch_size, config.seed, epoch)
        for index, batch in enumerate(batches):
            global_step = epoch * n_batches + index
            if global_step < step:
                continue
            if global_step >= stop_at:
                break
            loss = _batch_loss(model, batch, config.tau)
            value = float(loss.data)
            if not np.isfinite(value):
                raise RuntimeError(f"non-finite loss at step {global_step}")
            grads = nc.gradients(loss, model.params)
            nc.adamw_step(model.params, grads, state, global_step / total_steps)
            step = global_step + 1
            report.step_losses.append(value)
            epoch_sums.setdefault(epoch, []).append(value)
            if config.checkpoint_interval > 0 and step % config.checkpoint_interval == 0:
                _write_checkpoint(out_path, model, state, config, step, total_steps)
        if step >= stop_at:
            break
    report.steps = step - start_step
    report.epoch_losses = [float(np.mean(losses)) for _, losses in sorted(epoch_sums.items())]
    _write_checkpoint(out_path, model, state, config, step, total_steps)
    report.wall_time = time.monotonic() - began
    return report


def train(config: TrainingConfig, triplets, encoders, out_path,
          stop_after_steps: int | None = None) -> TrainReport:
    """Fresh training run; fully deterministic for a fixed (config, triplets)."""
    if not triplets:
        raise ValidationError("cannot train on an empty triplet list")
    _validate_ids(triplets, encoders)
    model = ComposedQueryModel.create(config.model, encoders, seed=config.seed)
    trainable = model.trainable_names()
    state = nc.AdamWState.create(model.params, trainable, _lr_of(config, encoders),
                                 config.weight_decay)
    return _run(model, state, config, triplets, out_path, 0, stop_after_steps)


def resume(checkpoint_path, config: TrainingConfig, triplets, encoders,
           out_path=None, stop_after_steps: int | None = None) -> TrainReport:
    """Continue an interrupted run; byte-identical to never interrupting."""
    if not triplets:
        raise ValidationError("cannot train on an empty triplet list")
    _validate_ids(triplets, encoders)
    model, extra, sidecar = load_checkpoint(checkpoint_path, encoders)

    saved = dict(sidecar["training"])
    saved["model"] = sidecar["model"]
    requested = config.to_dict()
    for fieldname in sorted(requested):
        if saved.get(fieldname) != requested[fieldname]:
            raise ConfigMismatch(fieldname, saved.get(fieldname), requested[fieldname])

    trainable = model.trainable_names()
    state = nc.AdamWState.create(model.params, trainable, _lr_of(config, encoders),
                                 config.weight_decay)
    state.step = int(extra.get("adam.step", np.array(0.0)))
    for name in state.m:
        if f"adam.m/{name}" in extra:
            state.m[name] = extra[f"adam.m/{name}"].copy()
            state.v[name] = extra[f"adam.v/{name}"].copy()
    start_step = int(sidecar["step"])
    return _run(model, state, config, triplets, out_path or checkpoint_path,
                start_step, stop_after_steps)
