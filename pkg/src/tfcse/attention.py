"""Squeeze-and-excitation attention blocks for [B, T, F, C] feature maps.

Three recalibration schemes over an input map U:

* channel attention: pool each channel over (time, frequency) to a single
  descriptor, pass it through a bottleneck MLP, and scale every channel by
  its gate value;
* time-frequency attention: collapse the channel axis with a single
  bias-free 1x1 filter shared across all locations, gate the resulting
  [T, F] map, and scale every location by its gate value;
* their combination, either as two parallel branches aggregated pointwise
  (addition / multiplication / maximization / channel concatenation) or
  applied sequentially, channel first.

Aggregation semantics: addition and maximization combine the two
recalibrated maps elementwise; multiplication combines the two gate fields
(channel gate times location gate) and rescales U once, keeping the output
linear in U; concatenation stacks the two recalibrated maps along the
channel axis, doubling the channel count.

Every block exposes ``forward``/``backward`` like the layers module and a
``force_identity`` switch that pins all gate values to exactly 1, which is
useful for isolating the effect of recalibration.  Forced gates are treated
as constants by ``backward``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError
from .layers import Layer, glorot_uniform
from .tensor import ACTIVATIONS, DiffNode, relu

VARIANTS = ("c", "tf", "tfc-concurrent", "tfc-sequential")
AGGREGATIONS = ("add", "mul", "max", "concat")
SQUEEZE_OPS = ("avg", "max")
EXCITE_OPS = ("sigmoid", "relu", "tanh")


@dataclass(frozen=True)
class SeConfig:
    """Configuration of one squeeze-excitation block.

    ``aggregation`` only affects the concurrent variant; ``squeeze_op``
    only affects the channel branch (the time-frequency branch has no
    pooling step); ``excite_op`` replaces the final gate nonlinearity in
    both branches while the bottleneck's internal activation stays ReLU.
    """

    variant: str = "tfc-concurrent"
    aggregation: str = "max"
    r: int = 8
    squeeze_op: str = "avg"
    excite_op: str = "sigmoid"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigurationError(f"unknown aggregation {self.aggregation!r}")
        if self.r < 1:
            raise ConfigurationError(f"reduction ratio must be positive, got {self.r}")
        if self.squeeze_op not in SQUEEZE_OPS:
            raise ConfigurationError(f"unknown squeeze op {self.squeeze_op!r}")
        if self.excite_op not in EXCITE_OPS:
            raise ConfigurationError(f"unknown excite op {self.excite_op!r}")

    @property
    def has_channel_branch(self) -> bool:
        return self.variant in ("c", "tfc-concurrent", "tfc-sequential")


class ChannelSE(Layer):
    """Channel-wise gating: squeeze (T, F) away, excite through a
    bottleneck of width C/r, rescale each channel."""

    def __init__(self, channels: int, r: int = 8, squeeze_op: str = "avg",
                 excite_op: str = "sigmoid", dtype=np.float32,
                 rng: np.random.Generator | None = None):
        if channels % r:
            raise ValueError(f"channels {channels} not divisible by reduction ratio {r}")
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.r = r
        self.squeeze_op = squeeze_op
        self.excite_op = excite_op
        self.force_identity = False
        hidden = channels // r
        self.w1 = DiffNode(glorot_uniform(rng, (hidden, channels), channels, hidden, dtype))
        self.b1 = DiffNode(np.zeros(hidden, dtype=dtype))
        self.w2 = DiffNode(glorot_uniform(rng, (channels, hidden), hidden, channels, dtype))
        self.b2 = DiffNode(np.zeros(channels, dtype=dtype))

    @property
    def out_channels_factor(self) -> int:
        return 1

    def parameters(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def squeeze(self, x: np.ndarray) -> np.ndarray:
        """Per-channel descriptor over (time, frequency): [B,T,F,C] -> [B,C]."""
        if self.squeeze_op == "avg":
            return x.mean(axis=(1, 2))
        return x.max(axis=(1, 2))

    def gates(self, x: np.ndarray) -> np.ndarray:
        """Attention vector s: [B, C]."""
        return self.forward_gates(x, keep=False)

    def forward_gates(self, x: np.ndarray, keep: bool) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise ShapeError(f"expected [B,T,F,{self.channels}] input, got {x.shape}")
        if self.force_identity:
            if keep:
                self._gate_cache = None
            return np.ones((x.shape[0], self.channels), dtype=x.dtype)
        z = self.squeeze(x)
        hidden = relu(z @ self.w1.value.T + self.b1.value)
        act, _ = ACTIVATIONS[self.excite_op]
        s = act(hidden @ self.w2.value.T + self.b2.value)
        if keep:
            if self.squeeze_op == "max":
                b, t, f, c = x.shape
                winners = x.reshape(b, t * f, c).argmax(axis=1)
            else:
                winners = None
            self._gate_cache = (x.shape, z, hidden, s, winners)
        return s

    def backward_gates(self, ds: np.ndarray) -> np.ndarray:
        """Input-gradient contribution of the gate path given ds = dL/ds;
        accumulates the bottleneck parameter gradients along the way."""
        if self._gate_cache is None:  # forced: gates are constants
            return np.zeros(1, dtype=ds.dtype)
        (b, t, f, c), z, hidden, s, winners = self._gate_cache
        _, grad_from_out = ACTIVATIONS[self.excite_op]
        dpre2 = ds * grad_from_out(s)
        self.w2.grad += dpre2.T @ hidden
        self.b2.grad += dpre2.sum(axis=0)
        dhidden = dpre2 @ self.w2.value
        dpre1 = dhidden * (hidden > 0)
        self.w1.grad += dpre1.T @ z
        self.b1.grad += dpre1.sum(axis=0)
        dz = dpre1 @ self.w1.value
        if self.squeeze_op == "avg":
            return np.broadcast_to(dz[:, None, None, :] / (t * f), (b, t, f, c))
        scatter = np.zeros((b, t * f, c), dtype=ds.dtype)
        np.put_along_axis(scatter, winners[:, None, :], dz[:, None, :], axis=1)
        return scatter.reshape(b, t, f, c)

    def forward(self, x, train=False, cache=None):
        keep = self._either(train, cache)
        s = self.forward_gates(x, keep)
        if keep:
            self._x, self._s = x, s
        return x * s[:, None, None, :]

    def backward(self, grad):
        x, s = self._x, self._s
        ds = (grad * x).sum(axis=(1, 2))
        return grad * s[:, None, None, :] + self.backward_gates(ds)


class TimeFreqSE(Layer):
    """Location-wise gating: one shared bias-free 1x1 filter collapses the
    channels, the gated [T, F] map rescales every channel alike."""

    def __init__(self, channels: int, excite_op: str = "sigmoid", dtype=np.float32,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.excite_op = excite_op
        self.force_identity = False
        self.w = DiffNode(glorot_uniform(rng, (channels,), channels, 1, dtype))

    @property
    def out_channels_factor(self) -> int:
        return 1

    def parameters(self):
        return [("w", self.w)]

    def gates(self, x: np.ndarray) -> np.ndarray:
        """Attention map S: [B, T, F]."""
        return self.forward_gates(x, keep=False)

    def forward_gates(self, x: np.ndarray, keep: bool) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise ShapeError(f"expected [B,T,F,{self.channels}] input, got {x.shape}")
        if self.force_identity:
            if keep:
                self._gate_cache = None
            return np.ones(x.shape[:3], dtype=x.dtype)
        act, _ = ACTIVATIONS[self.excite_op]
        s = act(x @ self.w.value)
        if keep:
            self._gate_cache = (x, s)
        return s

    def backward_gates(self, ds: np.ndarray) -> np.ndarray:
        if self._gate_cache is None:
            return np.zeros(1, dtype=ds.dtype)
        x, s = self._gate_cache
        _, grad_from_out = ACTIVATIONS[self.excite_op]
        dpre = ds * grad_from_out(s)
        self.w.grad += np.tensordot(dpre, x, axes=([0, 1, 2], [0, 1, 2]))
        return dpre[..., None] * self.w.value

    def forward(self, x, train=False, cache=None):
        keep = self._either(train, cache)
        s = self.forward_gates(x, keep)
        if keep:
            self._x, self._s = x, s
        return x * s[..., None]

    def backward(self, grad):
        x, s = self._x, self._s
        ds = (grad * x).sum(axis=3)
        return grad * s[..., None] + self.backward_gates(ds)


class ConcurrentTfcSE(Layer):
    """Channel and time-frequency branches applied in parallel to the same
    input and combined pointwise (see module docstring for the four
    aggregation rules)."""

    def __init__(self, cse: ChannelSE, tfse: TimeFreqSE, aggregation: str = "max"):
        if aggregation not in AGGREGATIONS:
            raise ConfigurationError(f"unknown aggregation {aggregation!r}")
        self.cse = cse
        self.tfse = tfse
        self.aggregation = aggregation

    @property
    def force_identity(self) -> bool:
        return self.cse.force_identity and self.tfse.force_identity

    @force_identity.setter
    def force_identity(self, value: bool) -> None:
        self.cse.force_identity = value
        self.tfse.force_identity = value

    @property
    def out_channels_factor(self) -> int:
        return 2 if self.aggregation == "concat" else 1

    def parameters(self):
        return ([(f"cse.{n}", p) for n, p in self.cse.parameters()]
                + [(f"tfse.{n}", p) for n, p in self.tfse.parameters()])

    def forward(self, x, train=False, cache=None):
        keep = self._either(train, cache)
        if self.aggregation == "mul":
            sc = self.cse.forward_gates(x, keep)
            st = self.tfse.forward_gates(x, keep)
            if keep:
                self._cache = (x, sc, st)
            return x * sc[:, None, None, :] * st[..., None]
        a = self.cse.forward(x, train=train, cache=keep)
        b = self.tfse.forward(x, train=train, cache=keep)
        if self.aggregation == "add":
            return a + b
        if self.aggregation == "max":
            if keep:
                self._cache = a >= b  # channel branch wins ties
            return np.maximum(a, b)
        return np.concatenate([a, b], axis=3)

    def backward(self, grad):
        if self.aggregation == "mul":
            x, sc, st = self._cache
            dx = grad * sc[:, None, None, :] * st[..., None]
            dsc = (grad * x * st[..., None]).sum(axis=(1, 2))
            dst = (grad * x * sc[:, None, None, :]).sum(axis=3)
            dx = dx + self.cse.backward_gates(dsc)
            dx = dx + self.tfse.backward_gates(dst)
            return dx
        if self.aggregation == "add":
            da, db = grad, grad
        elif self.aggregation == "max":
            a_wins = self._cache
            da = np.where(a_wins, grad, 0)
            db = np.where(a_wins, 0, grad)
        else:
            c = self.cse.channels
            da, db = grad[..., :c], grad[..., c:]
        return self.cse.backward(da) + self.tfse.backward(db)


class SequentialTfcSE(Layer):
    """Channel branch first, then time-frequency branch on its output."""

    def __init__(self, cse: ChannelSE, tfse: TimeFreqSE):
        self.cse = cse
        self.tfse = tfse

    @property
    def force_identity(self) -> bool:
        return self.cse.force_identity and self.tfse.force_identity

    @force_identity.setter
    def force_identity(self, value: bool) -> None:
        self.cse.force_identity = value
        self.tfse.force_identity = value

    @property
    def out_channels_factor(self) -> int:
        return 1

    def parameters(self):
        return ([(f"cse.{n}", p) for n, p in self.cse.parameters()]
                + [(f"tfse.{n}", p) for n, p in self.tfse.parameters()])

    def forward(self, x, train=False, cache=None):
        keep = self._either(train, cache)
        mid = self.cse.forward(x, train=train, cache=keep)
        return self.tfse.forward(mid, train=train, cache=keep)

    def backward(self, grad):
        return self.cse.backward(self.tfse.backward(grad))


def make_se_block(cfg: SeConfig, channels: int, dtype=np.float32,
                  rng: np.random.Generator | None = None):
    """Build the block described by ``cfg`` for a map with ``channels``."""
    rng = rng or np.random.default_rng(0)
    if cfg.has_channel_branch and channels % cfg.r:
        raise ConfigurationError(
            f"channel count {channels} not divisible by reduction ratio {cfg.r}")
    if cfg.variant == "c":
        return ChannelSE(channels, cfg.r, cfg.squeeze_op, cfg.excite_op, dtype, rng)
    if cfg.variant == "tf":
        return TimeFreqSE(channels, cfg.excite_op, dtype, rng)
    cse = ChannelSE(channels, cfg.r, cfg.squeeze_op, cfg.excite_op, dtype, rng)
    tfse = TimeFreqSE(channels, cfg.excite_op, dtype, rng)
    if cfg.variant == "tfc-concurrent":
        return ConcurrentTfcSE(cse, tfse, cfg.aggregation)
    return SequentialTfcSE(cse, tfse)


def se_param_count(cfg: SeConfig, channels: int) -> int:
    """Closed-form parameter count of one block (cross-check against the
    brute-force sum over the block's parameter arrays)."""
    if cfg.has_channel_branch and channels % cfg.r:
        raise ValueError(f"channel count {channels} not divisible by r={cfg.r}")
    hidden = channels // cfg.r
    cse = (channels * hidden + hidden) + (hidden * channels + channels)
    tfse = channels
    if cfg.variant == "c":
        return cse
    if cfg.variant == "tf":
        return tfse
    return cse + tfse
