"""Model assembly, training loop and inference.

Topology: four conv blocks -> dropout -> dense (maxout) -> dense logits,
split into one softmax head per landmark and axis.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import augment as aug
from .errors import ConfigError, InvalidArgumentError, ShapeError, StateError, TrainingDivergedError
from .landmarks import (
    LANDMARK_NAMES,
    LandmarkSet,
    decode_axis,
    encode_targets,
    landmarks_voxel_to_world,
    landmarks_world_to_voxel,
)
from .nn import checkpoint
from .nn.layers import ConvBlock, Dense, DenseMaxout, Dropout, SoftmaxHeads
from .nn.optim import Adadelta
from .volgrid import GridSpec, Volume, preprocess, resample

log = logging.getLogger(__name__)

NUM_BLOCKS = 4

_STREAMS = {"init": 0, "dropout": 1, "augment": 2, "shuffle": 3, "phantom": 4}


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose under one root seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_STREAMS[name],)))


@dataclass(frozen=True)
class ModelConfig:
    input_dims: Tuple[int, int, int] = (128, 128, 152)
    block_channels: Tuple[int, ...] = (8, 16, 32, 64)
    maxout_k: int = 2
    dense_hidden: int = 512
    num_landmarks: int = 12
    dropout_rate: float = 0.5
    sigma: float = 3.0
    seed: int = 0
    landmark_order: Tuple[str, ...] = LANDMARK_NAMES

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        object.__setattr__(self, "landmark_order", tuple(self.landmark_order))
        if len(self.input_dims) != 3:
            raise ConfigError("input_dims needs three components")
        if len(self.block_channels) != NUM_BLOCKS:
            raise ConfigError(f"block_channels must list {NUM_BLOCKS} widths, got {self.block_channels}")
        if min(self.block_channels) < 1 or self.dense_hidden < 1:
            raise ConfigError("channel and hidden widths must be positive")
        if self.maxout_k < 2:
            raise ConfigError("maxout_k must be >= 2")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if sorted(self.landmark_order) != sorted(LANDMARK_NAMES) or self.num_landmarks != len(LANDMARK_NAMES):
            raise ConfigError("landmark_order must be a permutation of the 12-landmark catalog")

    @property
    def grid_after_blocks(self) -> Tuple[int, int, int]:
        dims = self.input_dims
        for _ in range(NUM_BLOCKS):
            dims = tuple(d // 2 for d in dims)
        return dims


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1
    augment_per_sample: int = 1
    shuffle_seed: int = 0
    learning_rate: float = 1.0
    clip_norm: float = 0.0  # 0 disables clipping
    checkpoint: Optional[str] = None
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.augment_per_sample < 1:
            raise ConfigError("augment_per_sample must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.clip_norm >= 0:
            raise ConfigError(f"clip_norm must be >= 0, got {self.clip_norm}")


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = False
    translate_frac: float = aug.TRANSLATE_FRAC
    rotate_deg: float = aug.ROTATE_DEG


PROFILES = {
    "toy": dict(input_dims=(64, 64, 76), block_channels=(4, 8, 16, 32)),
    "full": dict(input_dims=(128, 128, 152), block_channels=(8, 16, 32, 64)),
}


def profile_config(name: str, **overrides) -> ModelConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return ModelConfig(**{**PROFILES[name], **overrides})


class Model:
    """The network plus its configuration. Build with :func:`build`."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = substream(config.seed, "init")
        self.blocks: List[ConvBlock] = []
        ch = 1
        for i, out_ch in enumerate(config.block_channels):
            self.blocks.append(ConvBlock(f"block{i}", ch, out_ch, rng, config.maxout_k, dtype=self.dtype))
            ch = out_ch
        self.n_features = ch * int(np.prod(config.grid_after_blocks))
        self.dropout = Dropout(config.dropout_rate)
        self.dropout.rng = substream(config.seed, "dropout")
        self.hidden = DenseMaxout("hidden", self.n_features, config.dense_hidden, rng, config.maxout_k, self.dtype)
        nx, ny, nz = config.input_dims
        per = nx + ny + nz
        self.head = Dense("head", config.dense_hidden, per * config.num_landmarks, rng, self.dtype)
        # head rows are drawn in catalog order, then arranged by landmark_order,
        # so each landmark keeps its weights under any head ordering
        w = self.head.weight.value.reshape(config.num_landmarks, per, -1)
        perm = [LANDMARK_NAMES.index(n) for n in config.landmark_order]
        self.head.weight.value = np.ascontiguousarray(w[perm].reshape(per * config.num_landmarks, -1))
        self.head.weight.grad = np.zeros_like(self.head.weight.value)
        self.heads = SoftmaxHeads([nx, ny, nz] * config.num_landmarks)
        self._forwarded = False

    def parameters(self):
        ps = [p for b in self.blocks for p in b.params]
        return ps + self.hidden.params + self.head.params

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def logits(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """``x`` is a (1, nx, ny, nz) array on the network grid."""
        if tuple(x.shape[1:]) != self.config.input_dims or x.shape[0] != 1:
            raise ShapeError(f"network expects input (1, {self.config.input_dims}), got {x.shape}")
        h = x.astype(self.dtype, copy=False)
        for b in self.blocks:
            h = b.forward(h)
        h = self.dropout.forward(h.reshape(-1), training)
        h = self.hidden.forward(h)
        self._forwarded = True
        return self.head.forward(h)

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        if not self._forwarded:
            raise StateError("backward called before forward")
        self._forwarded = False
        d = self.head.backward(dlogits)
        d = self.hidden.backward(d)
        d = self.dropout.backward(d)
        d = d.reshape((self.config.block_channels[-1],) + self.config.grid_after_blocks)
        for b in reversed(self.blocks):
            d = b.backward(d)
        return d

    def head_targets(self, targets) -> List[np.ndarray]:
        return [t for name in self.config.landmark_order for t in targets[name]]

    def group_probs(self, probs) -> Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]]:
        return {name: tuple(probs[3 * i:3 * i + 3]) for i, name in enumerate(self.config.landmark_order)}

    def loss_and_backward(self, x, targets) -> Tuple[float, Dict]:
        """Training-mode forward, summed cross-entropy, gradients accumulated into params."""
        logits = self.logits(x, training=True)
        loss, dlogits, probs = self.heads.loss(logits, self.head_targets(targets))
        self.backward(dlogits)
        return loss, self.group_probs(probs)

    def save(self, path, optimizer=None):
        checkpoint.save(path, self.parameters(), optimizer)

    def load(self, path, optimizer=None):
        checkpoint.load(path, self.parameters(), optimizer)
        return self


def build(config: ModelConfig, dtype=np.float32) -> Model:
    if min(config.input_dims) < 16:
        raise ConfigError(f"input dims {config.input_dims} too small for {NUM_BLOCKS} pooling halvings (need >= 16)")
    return Model(config, dtype)


def _network_input(model: Model, volume: Volume) -> np.ndarray:
    if not volume.normalized:
        raise StateError("forward expects a normalized volume")
    if volume.dims != model.config.input_dims:
        raise ShapeError(f"volume dims {volume.dims} != model input dims {model.config.input_dims}")
    return volume.data[None].astype(model.dtype)


def forward(model: Model, volume: Volume, training: bool = False):
    """Per-landmark (px, py, pz) probability vectors for a normalized volume."""
    logits = model.logits(_network_input(model, volume), training)
    model._forwarded = False
    return model.group_probs(model.heads.probabilities(logits))


def decode(probs, mode="argmax") -> LandmarkSet:
    return LandmarkSet({n: [decode_axis(p, mode) for p in ps] for n, ps in probs.items()}, frame="voxel")


@dataclass
class TrainingLog:
    epochs: List[int] = field(default_factory=list)
    mean_loss: List[float] = field(default_factory=list)
    mean_err_mm: List[float] = field(default_factory=list)
    target_entropy: float = 0.0
    best_epoch: int = 0

    def lines(self) -> List[str]:
        return [f"{e}\t{l:.6f}\t{d:.4f}" for e, l, d in zip(self.epochs, self.mean_loss, self.mean_err_mm)]


def prepare_sample(volume: Volume, lm: LandmarkSet, grid: GridSpec) -> Tuple[Volume, LandmarkSet]:
    """Bring a (volume, landmarks) pair onto the normalized network grid.

    Normalized volumes are taken as already on the grid and need voxel landmarks.
    """
    if volume.normalized:
        if lm.frame != "voxel":
            raise InvalidArgumentError("normalized volumes need voxel-frame landmarks")
        return volume, lm
    net = preprocess(volume, grid)
    if lm.frame == "world":
        lm = landmarks_world_to_voxel(lm, net)
    return net, lm


def _target_entropy(targets) -> float:
    h = 0.0
    for t in targets.values():
        for v in t:
            h -= float(np.sum(v * np.log(v)))
    return h


def best_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".best" + p.suffix)


def train(model: Model, dataset: Sequence[Tuple[Volume, LandmarkSet]], tc: TrainConfig,
          augment: AugmentConfig = AugmentConfig(), grid: Optional[GridSpec] = None) -> TrainingLog:
    """Adadelta training on summed per-axis soft-target cross-entropy."""
    if not dataset:
        raise InvalidArgumentError("training dataset is empty")
    cfg = model.config
    grid = grid or GridSpec(target_dims=cfg.input_dims)
    if tuple(grid.target_dims) != cfg.input_dims:
        raise ConfigError(f"grid dims {grid.target_dims} != model input dims {cfg.input_dims}")
    samples = []
    for i, (v, lm) in enumerate(dataset):
        if not lm.complete:
            raise InvalidArgumentError(f"sample {i} lacks landmarks {lm.missing()}")
        samples.append(prepare_sample(v, lm, grid))

    spacing = np.asarray(samples[0][0].spacing)
    opt = Adadelta(model.parameters(), learning_rate=tc.learning_rate, clip_norm=tc.clip_norm or None)
    aug_rng = substream(cfg.seed, "augment")
    shuffle_rng = np.random.default_rng(tc.shuffle_seed)
    out = TrainingLog()
    best_loss, best_values = math.inf, None
    log_file = open(tc.log_path, "w", encoding="utf-8") if tc.log_path else None
    try:
        for epoch in range(1, tc.epochs + 1):
            order = shuffle_rng.permutation(len(samples))
            losses, errs, entropies = [], [], []
            model.zero_grad()
            pending = 0
            for idx in order:
                vol, lm = samples[idx]
                for _ in range(tc.augment_per_sample):
                    if augment.enabled:
                        vol_a, lm_a = aug.augment_sample(vol, lm, aug_rng, augment.translate_frac, augment.rotate_deg)
                    else:
                        vol_a, lm_a = vol, lm
                    targets = encode_targets(lm_a, cfg.input_dims, cfg.sigma)
                    loss, probs = model.loss_and_backward(vol_a.data[None], targets)
                    if not math.isfinite(loss):
                        raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
                    losses.append(loss)
                    entropies.append(_target_entropy(targets))
                    pred = decode(probs)
                    errs.append(float(np.mean([
                        np.linalg.norm((pred[n] - lm_a[n]) * spacing) for n in pred
                    ])))
                    pending += 1
                    if pending == tc.batch_size:
                        _step(model, opt, pending, epoch)
                        pending = 0
            if pending:
                _step(model, opt, pending, epoch)
            mean_loss = float(np.mean(losses))
            out.epochs.append(epoch)
            out.mean_loss.append(mean_loss)
            out.mean_err_mm.append(float(np.mean(errs)))
            out.target_entropy = float(np.mean(entropies))
            line = out.lines()[-1]
            log.info("epoch %s", line.replace("\t", " "))
            if log_file:
                log_file.write(line + "\n")
                log_file.flush()
            if mean_loss < best_loss:
                best_loss = mean_loss
                out.best_epoch = epoch
                if tc.checkpoint:
                    best_values = [p.value.copy() for p in model.parameters()]
    finally:
        if log_file:
            log_file.close()

    if tc.checkpoint:
        model.save(tc.checkpoint, opt)
        if best_values is not None:
            current = [p.value for p in model.parameters()]
            for p, v in zip(model.parameters(), best_values):
                p.value = v
            model.save(best_path(tc.checkpoint))
            for p, v in zip(model.parameters(), current):
                p.value = v
    return out


def _step(model, opt, count, epoch):
    if count > 1:
        for p in model.parameters():
            p.grad /= count
    try:
        opt.step()
    except TrainingDivergedError as exc:
        raise TrainingDivergedError(f"epoch {epoch}: {exc}") from None
    model.zero_grad()


def predict(model: Model, volume: Volume, grid: Optional[GridSpec] = None, mode: str = "argmax") -> LandmarkSet:
    """Raw volume -> 12 landmarks in world mm."""
    grid = grid or GridSpec(target_dims=model.config.input_dims)
    if volume.normalized:
        net = volume
        ref = volume
    else:
        ref = resample(volume, grid.target_spacing, grid.pad_value_hu)
        net = preprocess(volume, grid)
    vox = decode(forward(model, net), mode)
    return landmarks_voxel_to_world(vox, ref)


# -- config file ----------------------------------------------------------------------

_TUPLE_KEYS = {"input_dims", "block_channels", "landmark_order", "target_dims"}
_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "aug": AugmentConfig,
    "grid": GridSpec,
}


def _coerce(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.replace(" ", ",").split(",") if s.strip()]
        if default and isinstance(default[0], str):
            return tuple(items)
        return tuple(int(s) for s in items)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if raw.lower() in ("", "none"):
        return None
    return raw


def parse_config(text: str) -> Dict[str, Dict[str, object]]:
    """Flat ``section.key = value`` lines -> per-section override dicts."""
    out: Dict[str, Dict[str, object]] = {s: {} for s in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        fields = {f.name: f for f in dataclasses.fields(_SECTIONS[section])}
        if name not in fields:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        default = fields[name].default
        if default is None:
            default = ""
        try:
            out[section][name] = _coerce(value, default)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return out


def load_config(path=None, profile: Optional[str] = None, seed: Optional[int] = None):
    """Returns ``(ModelConfig, TrainConfig, AugmentConfig, GridSpec)``.

    Precedence: built-in defaults < profile < config file < explicit seed.
    """
    sections = parse_config(Path(path).read_text(encoding="utf-8")) if path else {s: {} for s in _SECTIONS}
    if profile and profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    model_kw = dict(PROFILES[profile]) if profile else {}
    model_kw.update(sections["model"])
    if seed is not None:
        model_kw["seed"] = seed
    mc = ModelConfig(**model_kw)
    train_kw = dict(sections["train"])
    if seed is not None:
        train_kw.setdefault("shuffle_seed", seed)
    tc = TrainConfig(**train_kw)
    ac = AugmentConfig(**sections["aug"])
    grid_kw = {"target_dims": mc.input_dims, **sections["grid"]}
    gs = GridSpec(**grid_kw)
    if tuple(gs.target_dims) != mc.input_dims:
        raise ConfigError(f"grid.target_dims {gs.target_dims} disagrees with model.input_dims {mc.input_dims}")
    return mc, tc, ac, gs


def dump_config(mc: ModelConfig, tc: TrainConfig, ac: AugmentConfig, gs: GridSpec) -> str:
    lines = []
    for section, obj in (("model", mc), ("train", tc), ("aug", ac), ("grid", gs)):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            lines.append(f"{section}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
