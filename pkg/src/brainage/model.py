"""Brain-age CNN: architecture assembly, training recipe, prediction.

The network is num_blocks repetitions of [conv -> ReLU -> conv -> batchnorm
-> ReLU -> maxpool] with channel doubling per block, then flatten and a
single linear output. A fused variant runs two pretrained branch stacks
(e.g. GM and WM) and a fresh linear head over their concatenated features.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .engine.layers import (
    BatchNorm3d,
    Conv3d,
    Flatten,
    Linear,
    MaxPool3d,
    ReLU,
    Sequential,
)
from .engine.loss import mae_loss
from .engine.optim import SGD
from .errors import NumericError, ValidationError
from .volume import RigidTransform, TargetGrid, Volume3D, resample

_AXIS_NAMES = ("z", "h", "w")


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dims: tuple[int, int, int]
    input_channels: int = 1
    base_feature_maps: int = 8
    num_blocks: int = 5
    branches: int = 1
    zscore_inputs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        if len(self.input_dims) != 3 or any(d < 1 for d in self.input_dims):
            raise ValidationError(f"input_dims must be 3 positive ints, got {self.input_dims}")
        for value, name in (
            (self.input_channels, "input_channels"),
            (self.base_feature_maps, "base_feature_maps"),
            (self.num_blocks, "num_blocks"),
        ):
            if int(value) < 1:
                raise ValidationError(f"{name} must be positive, got {value}")
        if self.branches not in (1, 2):
            raise ValidationError(f"branches must be 1 or 2, got {self.branches}")
        min_extent = 2 ** self.num_blocks
        for axis, d in zip(_AXIS_NAMES, self.input_dims):
            if d < min_extent:
                raise ValidationError(
                    f"axis {axis} has extent {d} < 2^{self.num_blocks} = {min_extent}; "
                    f"too small for {self.num_blocks} pooling stages"
                )

    def channel_progression(self) -> list[int]:
        return [self.base_feature_maps * 2 ** b for b in range(self.num_blocks)]

    def final_map_dims(self) -> tuple[int, int, int]:
        dims = list(self.input_dims)
        for _ in range(self.num_blocks):
            dims = [d // 2 for d in dims]
        return tuple(dims)

    def flatten_width(self) -> int:
        d, h, w = self.final_map_dims()
        return self.channel_progression()[-1] * d * h * w


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    lr_decay_per_epoch: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 0.00005
    epochs: int = 100
    batch_size: int = 8
    augment: bool = False
    max_shift_voxels: int = 10
    max_rotation_degrees: float = 40.0
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lr_decay_per_epoch < 1.0:
            raise ValidationError(
                f"lr_decay_per_epoch must be in [0, 1), got {self.lr_decay_per_epoch}"
            )
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 0:
            raise ValidationError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be positive, got {self.batch_size}")
        if self.restarts < 1:
            raise ValidationError(f"restarts must be positive, got {self.restarts}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValidationError("learning_rate and weight_decay must be nonnegative")
        if self.max_shift_voxels < 0 or self.max_rotation_degrees < 0:
            raise ValidationError("augmentation magnitudes must be nonnegative")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    learning_rate: float
    train_mae: float
    val_mae: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_val_mae: float
    best_epoch: int
    best_restart: int
    restart_best_vals: list[float]
    seed: int


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Multiplicative schedule: lr0 * (1 - decay)^epoch."""
    if epoch < 0:
        raise ValidationError(f"epoch must be nonnegative, got {epoch}")
    return config.learning_rate * (1.0 - config.lr_decay_per_epoch) ** epoch


def _build_blocks(spec: ArchitectureSpec, rng: np.random.Generator, dtype) -> list:
    layers = []
    in_ch = spec.input_channels
    for ch in spec.channel_progression():
        layers += [
            Conv3d(in_ch, ch, rng, dtype=dtype),
            ReLU(),
            Conv3d(ch, ch, rng, dtype=dtype),
            BatchNorm3d(ch, dtype=dtype),
            ReLU(),
            MaxPool3d(),
        ]
        in_ch = ch
    return layers


class SingleBranchModel:
    """One convolutional stack ending in a scalar regression head."""

    def __init__(self, spec: ArchitectureSpec, rng: np.random.Generator,
                 dtype=np.float32):
        if spec.branches != 1:
            raise ValidationError("SingleBranchModel requires branches=1")
        self.spec = spec
        self.dtype = dtype
        layers = _build_blocks(spec, rng, dtype)
        layers += [Flatten(), Linear(spec.flatten_width(), 1, rng, dtype=dtype)]
        self.net = Sequential(layers)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        return self.net.forward(x, training=training)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return self.net.backward(grad_out)

    def parameters(self):
        return self.net.parameters()

    def named_parameters(self):
        return self.net.named_parameters()

    def named_buffers(self):
        return self.net.named_buffers()

    def reinitialize(self, rng: np.random.Generator) -> None:
        fresh = SingleBranchModel(self.spec, rng, dtype=self.dtype)
        _copy_state(fresh, self)


class FusedModel:
    """Two pretrained branch stacks feeding one fresh linear head."""

    def __init__(self, branch_a: Sequential, branch_b: Sequential,
                 spec: ArchitectureSpec, rng: np.random.Generator,
                 dtype=np.float32):
        if spec.branches != 2:
            raise ValidationError("FusedModel requires branches=2")
        self.spec = spec
        self.dtype = dtype
        self.branch_a = branch_a
        self.branch_b = branch_b
        width = 2 * spec.flatten_width()
        self.head = Linear(width, 1, rng, dtype=dtype)
        self._split = spec.flatten_width()

    def forward(self, x, training: bool = False) -> np.ndarray:
        xa, xb = x
        fa = self.branch_a.forward(xa, training=training)
        fb = self.branch_b.forward(xb, training=training)
        return self.head.forward(np.concatenate([fa, fb], axis=1), training=training)

    def backward(self, grad_out: np.ndarray):
        dcat = self.head.backward(grad_out)
        da = self.branch_a.backward(dcat[:, : self._split])
        db = self.branch_b.backward(dcat[:, self._split:])
        return da, db

    def parameters(self):
        return (
            self.branch_a.parameters()
            + self.branch_b.parameters()
            + self.head.parameters()
        )

    def named_parameters(self):
        out = [(f"branch0.{n}", p) for n, p in self.branch_a.named_parameters()]
        out += [(f"branch1.{n}", p) for n, p in self.branch_b.named_parameters()]
        out += [(f"head.{p.name}", p) for p in self.head.parameters()]
        return out

    def named_buffers(self):
        out = [(f"branch0.{n}", b) for n, b in self.branch_a.named_buffers()]
        out += [(f"branch1.{n}", b) for n, b in self.branch_b.named_buffers()]
        return out

    def reinitialize(self, rng: np.random.Generator) -> None:
        # The branches carry pretrained weights copied at fusion time; a
        # restart only redraws the fresh head.
        self.head = Linear(2 * self._split, 1, rng, dtype=self.dtype)


def _copy_state(src, dst) -> None:
    for (_, ps), (_, pd) in zip(src.named_parameters(), dst.named_parameters()):
        pd.data[...] = ps.data
        pd.grad[...] = 0
    for (_, bs), (_, bd) in zip(src.named_buffers(), dst.named_buffers()):
        bd[...] = bs


def _clone_stack(net: Sequential, dtype) -> Sequential:
    rng = np.random.default_rng(0)  # placeholder draws, overwritten below
    clones = []
    for layer in net.layers:
        if isinstance(layer, Conv3d):
            clone = Conv3d(layer.in_channels, layer.out_channels, rng, dtype=dtype)
            clone.weight.data[...] = layer.weight.data
            clone.bias.data[...] = layer.bias.data
        elif isinstance(layer, BatchNorm3d):
            clone = BatchNorm3d(layer.channels, dtype=dtype)
            clone.gamma.data[...] = layer.gamma.data
            clone.beta.data[...] = layer.beta.data
            clone.running_mean[...] = layer.running_mean
            clone.running_var[...] = layer.running_var
        elif isinstance(layer, Linear):
            clone = Linear(layer.in_features, layer.out_features, rng, dtype=dtype)
            clone.weight.data[...] = layer.weight.data
            clone.bias.data[...] = layer.bias.data
        elif isinstance(layer, (ReLU, MaxPool3d, Flatten)):
            clone = type(layer)()
        else:
            raise ValidationError(f"cannot clone layer {type(layer).__name__}")
        clones.append(clone)
    return Sequential(clones)


def build_single_branch(spec: ArchitectureSpec, rng: np.random.Generator,
                        dtype=np.float32) -> SingleBranchModel:
    return SingleBranchModel(spec, rng, dtype=dtype)


def build_fused(model_a: SingleBranchModel, model_b: SingleBranchModel,
                rng: np.random.Generator) -> FusedModel:
    """Join two trained branches: copy their conv stacks, drop their heads,
    and add one fresh linear layer over the concatenated block outputs.
    """
    sa, sb = model_a.spec, model_b.spec
    if sa.num_blocks != sb.num_blocks:
        raise ValidationError(
            f"branch block counts differ: {sa.num_blocks} vs {sb.num_blocks}"
        )
    if sa.flatten_width() != sb.flatten_width():
        raise ValidationError(
            f"branch output widths differ: {sa.flatten_width()} vs {sb.flatten_width()}"
        )
    if sa.input_dims != sb.input_dims or sa.input_channels != sb.input_channels:
        raise ValidationError("fused branches must share input dims and channels")

    fused_spec = replace(sa, branches=2)
    # keep every block layer plus Flatten; drop the final Linear head
    stack_a = _clone_stack(Sequential(model_a.net.layers[:-1]), model_a.dtype)
    stack_b = _clone_stack(Sequential(model_b.net.layers[:-1]), model_b.dtype)
    return FusedModel(stack_a, stack_b, fused_spec, rng, dtype=model_a.dtype)


def build_fused_from_spec(spec: ArchitectureSpec, rng: np.random.Generator,
                          dtype=np.float32) -> FusedModel:
    """Fresh (untrained) fused topology; used when loading checkpoints."""
    single = replace(spec, branches=1)
    stack_a = Sequential(_build_blocks(single, rng, dtype) + [Flatten()])
    stack_b = Sequential(_build_blocks(single, rng, dtype) + [Flatten()])
    return FusedModel(stack_a, stack_b, spec, rng, dtype=dtype)


def _sample_pose(rng: np.random.Generator, config: TrainConfig):
    shifts = rng.uniform(-config.max_shift_voxels, config.max_shift_voxels, 3)
    angles = rng.uniform(-config.max_rotation_degrees, config.max_rotation_degrees, 3)
    return shifts, angles


def _apply_pose(volume: Volume3D, shifts: np.ndarray, angles: np.ndarray) -> Volume3D:
    transform = RigidTransform(
        rotation=tuple(angles),
        translation=tuple(s * v for s, v in zip(shifts, volume.voxel_size)),
    )
    grid = TargetGrid(volume.dims, volume.voxel_size)
    return resample(volume, transform, grid, interpolation="trilinear")


def augment(volume: Volume3D, rng: np.random.Generator,
            config: TrainConfig) -> Volume3D:
    """Random rigid jitter: per-axis shift (voxels) and Euler angles, both
    uniform in the configured ranges; trilinear resampling, zero fill.
    """
    shifts, angles = _sample_pose(rng, config)
    return _apply_pose(volume, shifts, angles)


def _zscore(arr: np.ndarray) -> np.ndarray:
    flat = arr.reshape(arr.shape[0], -1)
    mean = flat.mean(axis=1, keepdims=True)
    std = flat.std(axis=1, keepdims=True)
    std = np.where(std < 1e-12, 1.0, std)
    return ((flat - mean) / std).reshape(arr.shape).astype(arr.dtype)


def _is_pairs(volumes) -> bool:
    return len(volumes) > 0 and isinstance(volumes[0], (tuple, list))


def stack_volumes(volumes, spec: ArchitectureSpec, dtype=np.float32):
    """Volume3D list -> (N, C, D, H, W) array (or a pair for fused input)."""
    if spec.branches == 2:
        if not _is_pairs(volumes):
            raise ValidationError("fused model input must be (gm, wm) volume pairs")
        xa = stack_volumes([p[0] for p in volumes], replace(spec, branches=1), dtype)
        xb = stack_volumes([p[1] for p in volumes], replace(spec, branches=1), dtype)
        return xa, xb

    if isinstance(volumes, np.ndarray):
        arr = volumes.astype(dtype, copy=False)
    else:
        for v in volumes:
            if v.dims != spec.input_dims:
                raise ValidationError(
                    f"volume dims {v.dims} do not match model input {spec.input_dims}"
                )
        arr = np.stack([v.data for v in volumes]).astype(dtype, copy=False)
        arr = arr[:, None]
    if arr.ndim == 4:
        arr = arr[:, None]
    if arr.shape[1] != spec.input_channels or arr.shape[2:] != spec.input_dims:
        raise ValidationError(
            f"input array shape {arr.shape} does not match model "
            f"({spec.input_channels}, {spec.input_dims})"
        )
    if spec.zscore_inputs:
        arr = _zscore(arr)
    return arr


def predict(model, volumes, batch_size: int = 16) -> np.ndarray:
    """Deterministic per-volume age predictions (eval-mode batchnorm)."""
    x = stack_volumes(volumes, model.spec, dtype=model.dtype)
    n = x[0].shape[0] if isinstance(x, tuple) else x.shape[0]
    preds = np.empty(n, dtype=np.float64)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        xb = (x[0][lo:hi], x[1][lo:hi]) if isinstance(x, tuple) else x[lo:hi]
        out = model.forward(xb, training=False)
        preds[lo:hi] = out[:, 0]
    return preds


def _snapshot(model):
    params = [np.copy(p.data) for _, p in model.named_parameters()]
    buffers = [np.copy(b) for _, b in model.named_buffers()]
    return params, buffers


def _restore(model, state) -> None:
    params, buffers = state
    for (_, p), saved in zip(model.named_parameters(), params):
        p.data[...] = saved
    for (_, b), saved in zip(model.named_buffers(), buffers):
        b[...] = saved


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo: lo + batch_size]


def train(model, train_data, val_data, config: TrainConfig) -> TrainResult:
    """Run the training recipe; the model ends up holding the best run's
    best-validation parameters.

    train_data and val_data are (volumes, ages) pairs: volumes is a list of
    Volume3D (or (gm, wm) tuples for a fused model), ages an array in years.
    With restarts R the whole recipe runs R times from fresh seeded
    initializations and the run with the lowest best validation MAE wins.
    """
    train_vols, train_ages = train_data
    val_vols, val_ages = val_data
    train_ages = np.asarray(train_ages, dtype=np.float64)
    val_ages = np.asarray(val_ages, dtype=np.float64)
    if len(train_vols) == 0 or len(val_vols) == 0:
        raise ValidationError("train and validation sets must be non-empty")
    if len(train_vols) != train_ages.size or len(val_vols) != val_ages.size:
        raise ValidationError("volumes and ages differ in length")

    fused = model.spec.branches == 2
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)

    best_overall = np.inf
    best_state = None
    best_restart = 0
    best_history: list[EpochRecord] = []
    best_epoch = -1
    restart_best_vals: list[float] = []

    for restart in range(config.restarts):
        rng = np.random.default_rng(seeds[restart])
        model.reinitialize(rng)
        optimizer = SGD(
            model.parameters(),
            momentum=config.momentum,
            weight_decay=config.weight_decay,
        )

        run_best_val = np.inf
        run_best_state = _snapshot(model)
        run_best_epoch = -1
        history: list[EpochRecord] = []

        for epoch in range(config.epochs):
            lr = lr_at_epoch(config, epoch)
            abs_err_sum = 0.0
            for batch_idx in _epoch_batches(len(train_vols), config.batch_size, rng):
                batch_vols = [train_vols[i] for i in batch_idx]
                if config.augment:
                    if fused:
                        out = []
                        for gm, wm in batch_vols:
                            shifts, angles = _sample_pose(rng, config)
                            out.append((
                                _apply_pose(gm, shifts, angles),
                                _apply_pose(wm, shifts, angles),
                            ))
                        batch_vols = out
                    else:
                        batch_vols = [augment(v, rng, config) for v in batch_vols]
                xb = stack_volumes(batch_vols, model.spec, dtype=model.dtype)
                yb = train_ages[batch_idx].astype(model.dtype)[:, None]

                pred = model.forward(xb, training=True)
                loss, dpred = mae_loss(pred, yb)
                if not np.isfinite(loss):
                    raise NumericError(
                        f"non-finite training loss at restart {restart}, "
                        f"epoch {epoch} (lr {lr:g})"
                    )
                optimizer.zero_grad()
                model.backward(dpred)
                optimizer.step(lr)
                abs_err_sum += loss * len(batch_idx)

            train_mae = abs_err_sum / len(train_vols)
            val_pred = predict(model, val_vols, batch_size=config.batch_size)
            val_mae = float(np.mean(np.abs(val_pred - val_ages)))
            if not np.isfinite(val_mae):
                raise NumericError(
                    f"non-finite validation MAE at restart {restart}, epoch {epoch}"
                )
            history.append(EpochRecord(epoch, lr, train_mae, val_mae))
            if val_mae < run_best_val:
                run_best_val = val_mae
                run_best_state = _snapshot(model)
                run_best_epoch = epoch

        restart_best_vals.append(run_best_val)
        if run_best_val < best_overall or best_state is None:
            best_overall = run_best_val
            best_state = run_best_state
            best_restart = restart
            best_history = history
            best_epoch = run_best_epoch

    _restore(model, best_state)
    return TrainResult(
        history=best_history,
        best_val_mae=float(best_overall),
        best_epoch=best_epoch,
        best_restart=best_restart,
        restart_best_vals=[float(v) for v in restart_best_vals],
        seed=config.seed,
    )
