"""CRNN for frame-level sound event detection, with optional attention.

The network stacks three convolution stages (3x3 conv, ReLU, batch norm,
optional squeeze-excitation block, frequency max-pool), flattens the
remaining frequency bins into the channel axis, runs two bidirectional GRU
layers, and classifies each frame with a linear layer followed by a sigmoid
layer, one output per class.

Checkpoints use a little-endian binary format: the magic ``TFCSE1``, a
length-prefixed JSON configuration block, then every named state array in
model order with a shape prefix (see ``save_checkpoint``).  Round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .attention import SeConfig, make_se_block
from .errors import ConfigurationError, ShapeError
from .layers import BatchNorm, BiGru, Conv2d, Fc, MaxPoolFreq, Relu
from .tensor import resolve_dtype
from .validation import check_feature_array

CHECKPOINT_MAGIC = b"TFCSE1"
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass(frozen=True)
class CrnnConfig:
    """Architecture hyperparameters; defaults give the full-size network."""

    frames: int = 256
    freq_bins: int = 256
    in_channels: int = 16
    conv_filters: int = 64
    pool_widths: tuple[int, ...] = (8, 8, 2)
    gru_units: int = 128
    fc_units: int = 128
    num_classes: int = 11
    se: SeConfig | None = None
    precision: str = "f32"
    seed: int = 0

    def __post_init__(self):
        if min(self.frames, self.freq_bins, self.in_channels, self.conv_filters,
               self.gru_units, self.fc_units, self.num_classes) < 1:
            raise ConfigurationError("all architecture extents must be >= 1")
        f = self.freq_bins
        for width in self.pool_widths:
            if f % width:
                raise ConfigurationError(
                    f"frequency bins {self.freq_bins} not divisible through pools "
                    f"{self.pool_widths} (stuck at {f} / {width})")
            f //= width

    @property
    def pooled_freq_bins(self) -> int:
        f = self.freq_bins
        for width in self.pool_widths:
            f //= width
        return f


class SedModel:
    """Built network; see :func:`build_model`."""

    def __init__(self, cfg: CrnnConfig):
        self.cfg = cfg
        dtype = resolve_dtype(cfg.precision)
        p = cfg.conv_filters

        def rng(slot):
            return np.random.default_rng((cfg.seed, slot))

        self.stages = []
        in_ch = cfg.in_channels
        for i, width in enumerate(cfg.pool_widths):
            conv = Conv2d(in_ch, p, dtype=dtype, rng=rng(10 * i))
            bn = BatchNorm(p, dtype=dtype)
            se = make_se_block(cfg.se, p, dtype=dtype, rng=rng(10 * i + 5)) if cfg.se else None
            self.stages.append((conv, Relu(), bn, se, MaxPoolFreq(width)))
            in_ch = p * (se.out_channels_factor if se else 1)

        gru_in = cfg.pooled_freq_bins * in_ch
        self.gru1 = BiGru(gru_in, cfg.gru_units, dtype=dtype, rng=rng(100))
        self.gru2 = BiGru(cfg.gru_units, cfg.gru_units, dtype=dtype, rng=rng(110))
        self.fc1 = Fc(cfg.gru_units, cfg.fc_units, "linear", dtype=dtype, rng=rng(120))
        self.fc2 = Fc(cfg.fc_units, cfg.num_classes, "sigmoid", dtype=dtype, rng=rng(130))

    # -- layer bookkeeping ------------------------------------------------

    def named_layers(self):
        for i, (conv, relu_, bn, se, pool) in enumerate(self.stages, start=1):
            yield f"conv{i}", conv
            yield f"relu{i}", relu_
            yield f"bn{i}", bn
            if se is not None:
                yield f"se{i}", se
            yield f"pool{i}", pool
        yield "gru1", self.gru1
        yield "gru2", self.gru2
        yield "fc1", self.fc1
        yield "fc2", self.fc2

    def parameters(self):
        """Trainable parameters as (qualified name, node), in model order."""
        out = []
        for lname, layer in self.named_layers():
            out.extend((f"{lname}.{pname}", node) for pname, node in layer.parameters())
        return out

    def state_arrays(self):
        """All persisted arrays (parameters plus batch-norm running stats)."""
        out = []
        for lname, layer in self.named_layers():
            out.extend((f"{lname}.{pname}", arr) for pname, arr in layer.state_arrays())
        return out

    def zero_grad(self):
        for _, node in self.parameters():
            node.zero_grad()

    def get_state(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in self.state_arrays():
            arr[...] = state[name]
        for _, layer in self.named_layers():
            if isinstance(layer, BatchNorm):
                layer.initialized = True

    def set_force_identity(self, value: bool) -> None:
        """Pin every attention gate to 1 (no-op for a plain CRNN)."""
        for _, _, _, se, _ in self.stages:
            if se is not None:
                se.force_identity = value

    # -- computation -------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False, cache: bool | None = None) -> np.ndarray:
        """Per-frame class probabilities [B, T, num_classes]."""
        x = check_feature_array(x, channels=self.cfg.in_channels)
        if x.shape[2] != self.cfg.freq_bins:
            raise ShapeError(f"expected {self.cfg.freq_bins} frequency bins, got {x.shape[2]}")
        x = np.ascontiguousarray(x, dtype=resolve_dtype(self.cfg.precision))
        keep = train if cache is None else cache
        for conv, relu_, bn, se, pool in self.stages:
            x = conv.forward(x, train, cache)
            x = relu_.forward(x, train, cache)
            x = bn.forward(x, train, cache)
            if se is not None:
                x = se.forward(x, train, cache)
            x = pool.forward(x, train, cache)
        b, t, f, c = x.shape
        if keep:
            self._conv_out_shape = x.shape
        x = x.reshape(b, t, f * c)
        x = self.gru1.forward(x, train, cache)
        x = self.gru2.forward(x, train, cache)
        x = self.fc1.forward(x, train, cache)
        return self.fc2.forward(x, train, cache)

    def backward(self, grad: np.ndarray, wrt: str = "probs") -> np.ndarray:
        """Backpropagate ``grad`` and return the input gradient.

        ``wrt='logits'`` treats ``grad`` as the gradient at the final layer's
        pre-activations (the numerically stable path when the loss already
        folds in the output sigmoid).
        """
        if wrt not in ("probs", "logits"):
            raise ValueError(f"wrt must be 'probs' or 'logits', got {wrt!r}")
        g = self.fc2.backward(grad, from_preactivation=(wrt == "logits"))
        g = self.fc1.backward(g)
        g = self.gru2.backward(g)
        g = self.gru1.backward(g)
        g = g.reshape(self._conv_out_shape)
        for conv, relu_, bn, se, pool in reversed(self.stages):
            g = pool.backward(g)
            if se is not None:
                g = se.backward(g)
            g = bn.backward(g)
            g = relu_.backward(g)
            g = conv.backward(g)
        return g


def build_model(cfg: CrnnConfig) -> SedModel:
    """Validate ``cfg`` and construct the deterministic, seed-driven model."""
    if cfg.se is not None and cfg.se.has_channel_branch and cfg.conv_filters % cfg.se.r:
        raise ConfigurationError(
            f"conv filter count {cfg.conv_filters} not divisible by reduction ratio {cfg.se.r}")
    return SedModel(cfg)


def count_parameters(model: SedModel) -> int:
    """Total size of every state array (batch norm counts gamma, beta and
    both running statistics, i.e. four values per channel)."""
    return sum(arr.size for _, arr in model.state_arrays())


def predict_events(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binarise per-frame probabilities; strictly above the threshold is
    active."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(probs) > threshold).astype(np.uint8)


# -- checkpoint io ---------------------------------------------------------

def _config_to_dict(cfg: CrnnConfig) -> dict:
    d = asdict(cfg)
    d["pool_widths"] = list(cfg.pool_widths)
    return d


def _config_from_dict(d: dict) -> CrnnConfig:
    d = dict(d)
    if d.get("se") is not None:
        d["se"] = SeConfig(**d["se"])
    d["pool_widths"] = tuple(d["pool_widths"])
    return CrnnConfig(**d)


def save_checkpoint(model: SedModel, path) -> None:
    """Write magic, config block, then each named array as
    ``u16 name-length, name, u8 dtype-code, u8 rank, u32 dims..., raw data``
    (all little-endian, arrays in model order)."""
    arrays = model.state_arrays()
    blob = json.dumps(_config_to_dict(model.cfg), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> SedModel:
    """Rebuild the model a checkpoint describes and restore its state
    bit-exactly.  Batch-norm running statistics are marked initialised."""
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint (bad magic)")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        cfg = _config_from_dict(json.loads(fh.read(blob_len).decode()))
        model = build_model(cfg)
        expected = dict(model.state_arrays())
        (count,) = struct.unpack("<I", fh.read(4))
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            code, rank = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            dtype = _CODE_DTYPES[code]
            data = np.frombuffer(fh.read(dtype.itemsize * int(np.prod(shape))),
                                 dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
            if name not in expected:
                raise ValueError(f"checkpoint contains unknown array {name!r}")
            if expected[name].shape != data.shape:
                raise ValueError(f"array {name!r} has shape {data.shape}, "
                                 f"expected {expected[name].shape}")
            expected[name][...] = data
            seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise ValueError(f"checkpoint is missing arrays: {sorted(missing)}")
    for _, layer in model.named_layers():
        if isinstance(layer, BatchNorm):
            layer.initialized = True
    return model
