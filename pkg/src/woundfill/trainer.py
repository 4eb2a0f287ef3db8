"""Training per loss function, best-epoch tracking on validation mIoU, and
selection of the best model across loss functions.  Also owns the
checkpoint file format."""

from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .losses import LOSS_KINDS, LossConfig, compute_loss, confusion, miou_from_confusion
from .mesh import CellFeatures, TriMesh
from .nn import AdamState, adam_step, lr_at_epoch
from .tsgcnet import ModelConfig, ModelParams, init_model, model_forward, prepare_features

log = logging.getLogger(__name__)

MAGIC = b"TSGW"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    base_lr: float = 1e-3
    decay_factor: float = 0.5
    decay_period: int = 20
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig.tiny)  # desk-scale network
    seed: int = 0
    split_ratio: float = 0.8
    dtype: str = "float32"

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        d["model"] = self.model.to_dict()
        return d


@dataclass
class Sample:
    name: str
    features: CellFeatures
    labels: np.ndarray

    @classmethod
    def from_mesh(cls, name: str, mesh: TriMesh, labels=None) -> "Sample":
        labels = mesh.labels if labels is None else labels
        if labels is None:
            raise ValueError(f"{name}: training samples need labels")
        return cls(name, prepare_features(mesh), np.asarray(labels, dtype=np.int64))


# checkpoints -----------------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: ModelConfig
    arrays: list[tuple[str, np.ndarray]]  # float32, declared order
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_params(cls, params: ModelParams, **meta) -> "Checkpoint":
        arrays = [(n, np.array(a, dtype="<f4")) for n, a in params.state()]
        return cls(params.config, arrays, dict(meta))

    def to_params(self, dtype=np.float32) -> ModelParams:
        params = init_model(self.model_config, seed=0, dtype=dtype)
        stored = dict(self.arrays)
        expected = [n for n, _ in params.state()]
        if expected != [n for n, _ in self.arrays]:
            raise CheckpointError("checkpoint arrays do not match the model layout")
        for name, target in params.state():
            src = stored[name]
            if src.shape != target.shape:
                raise CheckpointError(f"{name}: shape {src.shape} != {target.shape}")
            target[...] = src
        return params


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Layout: magic, version byte, u32 metadata length, JSON metadata,
    raw little-endian float32 blobs in declared order, u32 CRC32 of all
    preceding bytes."""
    header = {
        "model": ckpt.model_config.to_dict(),
        "meta": ckpt.meta,
        "arrays": [[n, list(a.shape)] for n, a in ckpt.arrays],
    }
    meta_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = bytearray(MAGIC)
    body += struct.pack("<B", ckpt.version)
    body += struct.pack("<I", len(meta_bytes))
    body += meta_bytes
    for _, arr in ckpt.arrays:
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    if len(data) < 13:
        raise CheckpointError(f"{path}: truncated checkpoint")
    version = data[4]
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    (meta_len,) = struct.unpack_from("<I", data, 5)
    if 9 + meta_len + 4 > len(data):
        raise CheckpointError(f"{path}: truncated checkpoint")
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    header = json.loads(data[9:9 + meta_len].decode("utf-8"))
    pos = 9 + meta_len
    arrays = []
    for name, shape in header["arrays"]:
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 4 * n > len(data) - 4:
            raise CheckpointError(f"{path}: truncated while reading {name}")
        arrays.append((name, np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape).copy()))
        pos += 4 * n
    if pos != len(data) - 4:
        raise CheckpointError(f"{path}: {len(data) - 4 - pos} trailing bytes")
    return Checkpoint(ModelConfig.from_dict(header["model"]), arrays, header["meta"], version)


# training --------------------------------------------------------------------

def split_indices(n: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, first round(ratio * n) go to training (at least one each side)."""
    if n < 2:
        raise ValueError("need at least two samples to split")
    order = np.random.default_rng([seed, 0x5B1]).permutation(n)
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def evaluate_miou(params: ModelParams, samples: Sequence[Sample]) -> float:
    c = params.config.num_classes
    cm = np.zeros((c, c), dtype=np.int64)
    for s in samples:
        probs, _ = model_forward(params, s.features)
        cm += confusion(probs.data.argmax(1), s.labels, c)
    return miou_from_confusion(cm).miou


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    best_miou: float
    best_epoch: int
    history: list[dict]
    train_ids: list[str]
    val_ids: list[str]


def _snapshot(params: ModelParams) -> list[np.ndarray]:
    return [a.copy() for _, a in params.state()]


def _restore(params: ModelParams, snap: list[np.ndarray]) -> None:
    for (_, target), src in zip(params.state(), snap):
        target[...] = src


def train_with_loss(dataset: Sequence[Sample], cfg: TrainConfig,
                    on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train one model with ``cfg.loss``; keep the parameters of the epoch with
    the highest validation mIoU (strict improvement only)."""
    if not dataset:
        raise ValueError("empty dataset")
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    train_idx, val_idx = split_indices(len(dataset), cfg.split_ratio, cfg.seed)
    train = [dataset[i] for i in train_idx]
    val = [dataset[i] for i in val_idx]
    params = init_model(cfg.model, seed=cfg.seed, dtype=dtype)
    tensors = params.parameters()
    adam = AdamState.for_params([p.data for p in tensors])
    shuffle_rng = np.random.default_rng([cfg.seed, 0x5F1])

    best_miou, best_epoch = 0.0, 0
    best = _snapshot(params)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at_epoch(cfg.base_lr, epoch, cfg.decay_factor, cfg.decay_period)
        order = shuffle_rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            probs = [model_forward(params, s.features, training=True)[0] for s in batch]
            P = ag.concat(probs, axis=0) if len(probs) > 1 else probs[0]
            labels = np.concatenate([s.labels for s in batch])
            loss = compute_loss(cfg.loss, P, labels)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(
                    f"non-finite {cfg.loss.kind} loss at epoch {epoch}, batch {start // cfg.batch_size}: "
                    f"{[s.name for s in batch]}"
                )
            params.zero_grad()
            loss.backward()
            adam_step(adam, [p.data for p in tensors],
                      [p.grad if p.grad is not None else np.zeros_like(p.data) for p in tensors], lr)
            losses.append(value)
        val_miou = evaluate_miou(params, val)
        record = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)), "val_miou": val_miou}
        history.append(record)
        log.info("%s epoch %d lr %.2e loss %.5f val mIoU %.5f", cfg.loss.kind, epoch, lr,
                 record["train_loss"], val_miou)
        if on_epoch is not None:
            on_epoch(record)
        if val_miou > best_miou:
            best_miou, best_epoch = val_miou, epoch
            best = _snapshot(params)
    _restore(params, best)
    ckpt = Checkpoint.from_params(params, epoch=best_epoch, best_miou=best_miou,
                                  loss_kind=cfg.loss.kind, seed=cfg.seed)
    return TrainResult(ckpt, best_miou, best_epoch, history,
                       [s.name for s in train], [s.name for s in val])


# selection -------------------------------------------------------------------

@dataclass
class SelectionReport:
    losses: list[str]
    best_mious: list[float]
    best_epochs: list[int]
    chosen_index: int
    chosen_loss: str
    chosen_checkpoint: str | None
    epoch_of_best: int

    def to_dict(self) -> dict:
        return asdict(self)


def _run_one(args):
    dataset, cfg = args
    return train_with_loss(dataset, cfg)


def select_best_model(dataset: Sequence[Sample], losses: Sequence[str | LossConfig] = LOSS_KINDS,
                      cfg: TrainConfig | None = None, out_dir=None,
                      trainer: Callable[[Sequence[Sample], TrainConfig], TrainResult] = train_with_loss,
                      parallel: int = 1) -> tuple[SelectionReport, list[TrainResult]]:
    """Train once per loss function and keep the run with the highest best mIoU.

    Ties go to the loss listed first.
    """
    cfg = cfg or TrainConfig()
    loss_cfgs = [l if isinstance(l, LossConfig) else replace(cfg.loss, kind=l) for l in losses]
    if not loss_cfgs:
        raise ValueError("loss list is empty")
    run_cfgs = [replace(cfg, loss=lc) for lc in loss_cfgs]
    if parallel > 1 and trainer is train_with_loss:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_one, [(dataset, rc) for rc in run_cfgs]))
    else:
        results = [trainer(dataset, rc) for rc in run_cfgs]
    scores = [r.best_miou for r in results]
    chosen = int(np.argmax(scores))  # first maximum
    paths: list[str | None] = [None] * len(results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, (lc, r) in enumerate(zip(loss_cfgs, results)):
            p = out / f"model_{i}_{lc.kind}.tsgw"
            save_checkpoint(r.checkpoint, p)
            paths[i] = str(p)
    report = SelectionReport(
        losses=[lc.kind for lc in loss_cfgs],
        best_mious=scores,
        best_epochs=[r.best_epoch for r in results],
        chosen_index=chosen,
        chosen_loss=loss_cfgs[chosen].kind,
        chosen_checkpoint=paths[chosen],
        epoch_of_best=results[chosen].best_epoch,
    )
    return report, results


def training_report(report: SelectionReport, results: Sequence[TrainResult], cfg: TrainConfig) -> dict:
    return {
        "config": cfg.to_dict(),
        "runs": [
            {"loss": kind, "best_miou": r.best_miou, "best_epoch": r.best_epoch,
             "train_ids": r.train_ids, "val_ids": r.val_ids, "epochs": r.history}
            for kind, r in zip(report.losses, results)
        ],
        "selection": report.to_dict(),
    }
