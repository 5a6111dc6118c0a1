"""Neural network layers with explicit forward/backward pairs.

Feature maps are laid out ``[batch, time, frequency, channel]``.  Every layer
keeps its parameters as :class:`~tfcse.tensor.DiffNode` and accumulates
parameter gradients during ``backward``; the input gradient is returned.

Forward passes store the arrays backward needs only when ``cache`` is true
(default: when ``train`` is true), so eval-mode inference does not mutate
layer state and is safe to run concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, StateError
from .tensor import DiffNode, sigmoid, sigmoid_grad


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Shared plumbing: parameter listing and gradient reset."""

    def parameters(self) -> list[tuple[str, DiffNode]]:
        return []

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Named arrays persisted in checkpoints and counted as parameters."""
        return [(name, node.value) for name, node in self.parameters()]

    def zero_grad(self) -> None:
        for _, node in self.parameters():
            node.zero_grad()

    @staticmethod
    def _either(train: bool, cache: bool | None) -> bool:
        return train if cache is None else cache


class Relu(Layer):
    def forward(self, x, train=False, cache=None):
        out = np.maximum(x, 0)
        if self._either(train, cache):
            self._mask = x > 0
        return out

    def backward(self, grad):
        return grad * self._mask


class Conv2d(Layer):
    """Same-padded 2-D cross-correlation over (time, frequency).

    Weights are ``[kh, kw, in_channels, out_channels]`` with one bias per
    output channel; zero padding keeps the time and frequency extents of the
    input.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        fan_in = kernel * kernel * in_channels
        fan_out = kernel * kernel * out_channels
        self.weights = DiffNode(glorot_uniform(rng, (kernel, kernel, in_channels, out_channels),
                                               fan_in, fan_out, dtype))
        self.bias = DiffNode(np.zeros(out_channels, dtype=dtype))

    def parameters(self):
        return [("weights", self.weights), ("bias", self.bias)]

    def forward(self, x, train=False, cache=None):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"expected [B,T,F,{self.in_channels}] input, got {x.shape}")
        b, t, f, _ = x.shape
        k = self.kernel
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        w = self.weights.value
        out = np.zeros((b, t, f, self.out_channels), dtype=x.dtype)
        flat = out.reshape(-1, self.out_channels)
        for dt in range(k):
            for df in range(k):
                flat += xp[:, dt:dt + t, df:df + f, :].reshape(-1, self.in_channels) @ w[dt, df]
        out += self.bias.value
        if self._either(train, cache):
            self._cache = xp
        return out

    def backward(self, grad):
        xp = self._cache
        b = xp.shape[0]
        k = self.kernel
        pad = k // 2
        t, f = grad.shape[1], grad.shape[2]
        w = self.weights.value
        gflat = grad.reshape(-1, self.out_channels)
        self.bias.grad += grad.sum(axis=(0, 1, 2))
        dxp = np.zeros_like(xp)
        for dt in range(k):
            for df in range(k):
                patch = xp[:, dt:dt + t, df:df + f, :].reshape(-1, self.in_channels)
                self.weights.grad[dt, df] += patch.T @ gflat
                dxp[:, dt:dt + t, df:df + f, :] += (gflat @ w[dt, df].T).reshape(b, t, f, self.in_channels)
        return dxp[:, pad:pad + t, pad:pad + f, :]


class MaxPoolFreq(Layer):
    """Non-overlapping max pooling along the frequency axis only."""

    def __init__(self, width: int):
        if width < 1:
            raise ValueError(f"pool width must be >= 1, got {width}")
        self.width = width

    def forward(self, x, train=False, cache=None):
        b, t, f, c = x.shape
        w = self.width
        if f % w:
            raise ValueError(f"frequency extent {f} not divisible by pool width {w}")
        windows = x.reshape(b, t, f // w, w, c)
        if not self._either(train, cache):
            return windows.max(axis=3)
        # argmax picks the first maximum in the window, so gradient routing
        # is deterministic under ties
        winners = windows.argmax(axis=3)
        self._cache = (winners, x.shape)
        return np.take_along_axis(windows, winners[:, :, :, None, :], axis=3)[:, :, :, 0, :]

    def backward(self, grad):
        winners, shape = self._cache
        b, t, f, c = shape
        w = self.width
        dwin = np.zeros((b, t, f // w, w, c), dtype=grad.dtype)
        np.put_along_axis(dwin, winners[:, :, :, None, :], grad[:, :, :, None, :], axis=3)
        return dwin.reshape(b, t, f, c)


class BatchNorm(Layer):
    """Per-channel batch normalisation over (batch, time, frequency).

    Training mode normalises with batch statistics and updates running
    estimates by exponential moving average; eval mode uses the running
    estimates and refuses to run before they have been populated.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = DiffNode(np.ones(channels, dtype=dtype))
        self.beta = DiffNode(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.initialized = False

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state_arrays(self):
        return [("gamma", self.gamma.value), ("beta", self.beta.value),
                ("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x, train=False, cache=None):
        if x.shape[3] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {x.shape[3]}")
        if train:
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            self.running_mean = ((1 - self.momentum) * self.running_mean
                                 + self.momentum * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - self.momentum) * self.running_var
                                + self.momentum * var).astype(self.running_var.dtype)
            self.initialized = True
        else:
            if not self.initialized:
                raise StateError("eval-mode batchnorm before running statistics exist")
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        out = self.gamma.value * xhat + self.beta.value
        if self._either(train, cache):
            self._cache = (xhat, inv_std, train)
        return out

    def backward(self, grad):
        xhat, inv_std, trained = self._cache
        self.beta.grad += grad.sum(axis=(0, 1, 2))
        self.gamma.grad += (grad * xhat).sum(axis=(0, 1, 2))
        dxhat = grad * self.gamma.value
        if not trained:
            return dxhat * inv_std
        m = xhat.shape[0] * xhat.shape[1] * xhat.shape[2]
        return (inv_std / m) * (m * dxhat
                                - dxhat.sum(axis=(0, 1, 2))
                                - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))


class _GruDirection:
    """One direction of a GRU: three gates with shared per-gate biases.

    Update gate z and reset gate r use the logistic function; the candidate
    uses tanh with the reset gate applied inside its recurrent term:

        h_t = (1 - z) * h_{t-1} + z * tanh(Wh x + Uh (r * h_{t-1}) + bh)
    """

    GATES = ("z", "r", "h")

    def __init__(self, input_size: int, hidden_size: int, dtype, rng):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w = {}
        self.u = {}
        self.b = {}
        for gate in self.GATES:
            self.w[gate] = DiffNode(glorot_uniform(rng, (input_size, hidden_size),
                                                   input_size, hidden_size, dtype))
            self.u[gate] = DiffNode(glorot_uniform(rng, (hidden_size, hidden_size),
                                                   hidden_size, hidden_size, dtype))
            self.b[gate] = DiffNode(np.zeros(hidden_size, dtype=dtype))

    def parameters(self, prefix):
        out = []
        for gate in self.GATES:
            out.append((f"{prefix}.w{gate}", self.w[gate]))
            out.append((f"{prefix}.u{gate}", self.u[gate]))
            out.append((f"{prefix}.b{gate}", self.b[gate]))
        return out

    def forward(self, x, keep_cache):
        b, t, _ = x.shape
        h = np.zeros((b, self.hidden_size), dtype=x.dtype)
        out = np.empty((b, t, self.hidden_size), dtype=x.dtype)
        steps = []
        wz, wr, wh = self.w["z"].value, self.w["r"].value, self.w["h"].value
        uz, ur, uh = self.u["z"].value, self.u["r"].value, self.u["h"].value
        bz, br, bh = self.b["z"].value, self.b["r"].value, self.b["h"].value
        for i in range(t):
            xt = x[:, i, :]
            z = sigmoid(xt @ wz + h @ uz + bz)
            r = sigmoid(xt @ wr + h @ ur + br)
            rh = r * h
            hc = np.tanh(xt @ wh + rh @ uh + bh)
            h_new = (1 - z) * h + z * hc
            if keep_cache:
                steps.append((xt, h, z, r, rh, hc))
            h = h_new
            out[:, i, :] = h
        if keep_cache:
            self._steps = steps
        return out

    def backward(self, grad):
        steps = self._steps
        b, t, _ = grad.shape
        dx = np.empty((b, t, self.input_size), dtype=grad.dtype)
        dh_next = np.zeros((b, self.hidden_size), dtype=grad.dtype)
        wz, wr, wh = self.w["z"].value, self.w["r"].value, self.w["h"].value
        uz, ur, uh = self.u["z"].value, self.u["r"].value, self.u["h"].value
        for i in range(t - 1, -1, -1):
            xt, h_prev, z, r, rh, hc = steps[i]
            dh = grad[:, i, :] + dh_next
            dz = dh * (hc - h_prev)
            dhc = dh * z
            daz = dz * z * (1 - z)
            dah = dhc * (1 - hc * hc)
            dh_prev = dh * (1 - z)

            drh = dah @ uh.T
            dr = drh * h_prev
            dh_prev += drh * r
            dar = dr * r * (1 - r)

            dh_prev += daz @ uz.T + dar @ ur.T
            self.w["z"].grad += xt.T @ daz
            self.w["r"].grad += xt.T @ dar
            self.w["h"].grad += xt.T @ dah
            self.u["z"].grad += h_prev.T @ daz
            self.u["r"].grad += h_prev.T @ dar
            self.u["h"].grad += rh.T @ dah
            self.b["z"].grad += daz.sum(axis=0)
            self.b["r"].grad += dar.sum(axis=0)
            self.b["h"].grad += dah.sum(axis=0)
            dx[:, i, :] = daz @ wz.T + dar @ wr.T + dah @ wh.T
            dh_next = dh_prev
        return dx


class BiGru(Layer):
    """Bidirectional GRU; the two directions are merged by elementwise sum,
    so the output width equals the per-direction hidden size."""

    def __init__(self, input_size: int, hidden_size: int, dtype=np.float32,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.fwd = _GruDirection(input_size, hidden_size, dtype, rng)
        self.bwd = _GruDirection(input_size, hidden_size, dtype, rng)

    def parameters(self):
        return self.fwd.parameters("fwd") + self.bwd.parameters("bwd")

    def forward(self, x, train=False, cache=None):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(f"expected [B,T,{self.input_size}] input, got {x.shape}")
        keep = self._either(train, cache)
        out_f = self.fwd.forward(x, keep)
        out_b = self.bwd.forward(x[:, ::-1, :], keep)
        return out_f + out_b[:, ::-1, :]

    def backward(self, grad):
        dx = self.fwd.backward(grad)
        dx += self.bwd.backward(grad[:, ::-1, :])[:, ::-1, :]
        return dx


class Fc(Layer):
    """Affine map applied per time step, with linear or sigmoid activation."""

    def __init__(self, input_size: int, output_size: int, activation: str = "linear",
                 dtype=np.float32, rng: np.random.Generator | None = None):
        if activation not in ("linear", "sigmoid"):
            raise ValueError(f"unsupported activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.input_size = input_size
        self.output_size = output_size
        self.activation = activation
        self.w = DiffNode(glorot_uniform(rng, (input_size, output_size),
                                         input_size, output_size, dtype))
        self.b = DiffNode(np.zeros(output_size, dtype=dtype))

    def parameters(self):
        return [("w", self.w), ("b", self.b)]

    def forward(self, x, train=False, cache=None):
        if x.shape[-1] != self.input_size:
            raise ShapeError(f"expected width {self.input_size}, got {x.shape[-1]}")
        pre = x @ self.w.value + self.b.value
        out = sigmoid(pre) if self.activation == "sigmoid" else pre
        if self._either(train, cache):
            self._cache = (x, out)
        return out

    def backward(self, grad, from_preactivation: bool = False):
        """Backward pass; ``from_preactivation`` skips the activation
        derivative (used when the loss gradient is already fused with the
        final sigmoid)."""
        x, out = self._cache
        if self.activation == "sigmoid" and not from_preactivation:
            grad = grad * sigmoid_grad(out)
        flat_x = x.reshape(-1, self.input_size)
        flat_g = grad.reshape(-1, self.output_size)
        self.w.grad += flat_x.T @ flat_g
        self.b.grad += flat_g.sum(axis=0)
        return (flat_g @ self.w.value.T).reshape(x.shape)
