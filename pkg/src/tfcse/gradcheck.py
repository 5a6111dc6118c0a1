"""Central finite-difference verification of analytic gradients.

All checks run in float64.  The error measure is
``max |analytic - numeric| / max(1, |analytic|, |numeric|)`` per element,
i.e. relative for large gradients and absolute near zero.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DEFAULT_STEP = 1e-5


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                 h: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``f`` at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(x)
        flat[i] = keep - h
        fm = f(x)
        flat[i] = keep
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_layer(layer, x: np.ndarray, rng: np.random.Generator,
                h: float = DEFAULT_STEP, train: bool = True) -> dict[str, float]:
    """Finite-difference check of a forward/backward layer.

    Verifies the input gradient returned by ``backward`` and the gradients
    accumulated into every parameter, against numeric differentiation of the
    scalar projection ``sum(R * forward(x))`` for a fixed random ``R``.
    Returns a mapping of check name to error.
    """
    x = np.asarray(x, dtype=np.float64)
    out = layer.forward(x, train=train, cache=True)
    proj = rng.standard_normal(out.shape)

    def loss_for_input(xv):
        return float(np.sum(proj * layer.forward(xv, train=train, cache=False)))

    params = list(layer.parameters())
    for _, node in params:
        node.zero_grad()
    grad_in = layer.backward(proj)

    errors = {"input": rel_error(grad_in, numeric_grad(loss_for_input, x, h))}
    for name, node in params:
        # numeric_grad perturbs a copy; f writes it into the live parameter
        def f(pv, node=node):
            node.value[...] = pv
            return float(np.sum(proj * layer.forward(x, train=train, cache=False)))

        original = node.value.copy()
        num = numeric_grad(f, node.value.copy(), h)
        node.value[...] = original
        errors[name] = rel_error(node.grad, num)
    return errors


def check_node_op(build, inputs: list[np.ndarray], h: float = DEFAULT_STEP,
                  seed: int = 0) -> float:
    """Check a tensor-op graph: ``build(*nodes) -> DiffNode``.

    Uses a fixed random projection as the backward seed and compares every
    input's accumulated gradient with central differences.
    """
    from .tensor import DiffNode

    rng = np.random.default_rng(seed)
    nodes = [DiffNode(np.asarray(v, dtype=np.float64)) for v in inputs]
    out = build(*nodes)
    proj = rng.standard_normal(out.shape)
    out.backward(proj)

    worst = 0.0
    for i, node in enumerate(nodes):
        def f(v, i=i):
            fresh = [DiffNode(np.asarray(x, dtype=np.float64)) for x in inputs]
            fresh[i].value[...] = v
            return float(np.sum(proj * build(*fresh).value))

        worst = max(worst, rel_error(node.grad, numeric_grad(f, np.asarray(inputs[i], dtype=np.float64), h)))
    return worst


def check_model(model, x: np.ndarray, rng: np.random.Generator,
                h: float = DEFAULT_STEP) -> float:
    """Whole-network check: input gradient plus every trainable parameter.

    All parameters are jittered first; zero-initialised biases would
    otherwise leave downstream ReLUs exactly at their kink (e.g. the
    channel-attention bottleneck fed by a normalised squeeze), where no
    subgradient matches a central difference.
    """
    x = np.asarray(x, dtype=np.float64)
    for _, node in model.parameters():
        node.value += rng.uniform(-0.2, 0.2, node.value.shape)
    out = model.forward(x, train=True, cache=True)
    proj = rng.standard_normal(out.shape)
    model.zero_grad()
    grad_in = model.backward(proj, wrt="probs")

    def loss_for_input(v):
        return float(np.sum(proj * model.forward(v, train=True, cache=False)))

    worst = rel_error(grad_in, numeric_grad(loss_for_input, x, h))
    for name, node in model.parameters():
        def f(v, node=node):
            node.value[...] = v
            return float(np.sum(proj * model.forward(x, train=True, cache=False)))

        original = node.value.copy()
        num = numeric_grad(f, node.value.copy(), h)
        node.value[...] = original
        worst = max(worst, rel_error(node.grad, num))
    return worst


OP_TOL = 1e-6
LAYER_TOL = 1e-5
MODEL_TOL = 1e-4


def run_full_suite(h: float = DEFAULT_STEP) -> list[tuple[str, float, float]]:
    """Every operation, layer, attention block and a whole tiny network,
    checked in float64.  Returns (check name, max error, tolerance) rows."""
    from . import attention, layers, tensor
    from .model import CrnnConfig, build_model

    rng = np.random.default_rng(2024)
    rows: list[tuple[str, float, float]] = []

    def u(*shape):
        return rng.uniform(-1, 1, shape)

    for op in ("add", "sub", "mul", "max"):
        rows.append((f"op.{op}", check_node_op(
            lambda a, b, op=op: tensor.elementwise(op, a, b), [u(4, 5), u(4, 5)]), OP_TOL))
    for op in ("sigmoid", "relu", "tanh"):
        rows.append((f"op.{op}", check_node_op(
            lambda a, op=op: tensor.elementwise(op, a), [u(4, 5)]), OP_TOL))
    rows.append(("op.matmul", check_node_op(tensor.matmul, [u(4, 6), u(6, 3)]), OP_TOL))
    rows.append(("op.reduce_mean", check_node_op(
        lambda a: tensor.reduce("mean", a, (0, 1)), [u(5, 6)]), OP_TOL))
    rows.append(("op.reduce_max", check_node_op(
        lambda a: tensor.reduce("max", a, (0, 1)), [u(5, 6)]), OP_TOL))

    def layer_row(name, layer, x, train=True):
        errors = check_layer(layer, x, rng, h=h, train=train)
        rows.append((name, max(errors.values()), LAYER_TOL))

    layer_row("layer.relu", layers.Relu(), u(2, 3, 4, 2))
    layer_row("layer.conv2d", layers.Conv2d(2, 3, dtype=np.float64,
                                            rng=np.random.default_rng(1)), u(2, 4, 5, 2))
    layer_row("layer.maxpool_freq", layers.MaxPoolFreq(2), u(2, 3, 6, 2))
    bn = layers.BatchNorm(3, dtype=np.float64)
    layer_row("layer.batchnorm_train", bn, u(2, 3, 4, 3), train=True)
    bn_eval = layers.BatchNorm(3, dtype=np.float64)
    bn_eval.forward(u(2, 3, 4, 3), train=True)
    layer_row("layer.batchnorm_eval", bn_eval, u(2, 3, 4, 3), train=False)
    layer_row("layer.bigru", layers.BiGru(3, 4, dtype=np.float64,
                                          rng=np.random.default_rng(2)), u(2, 5, 3))
    layer_row("layer.fc_linear", layers.Fc(3, 4, "linear", dtype=np.float64,
                                           rng=np.random.default_rng(3)), u(2, 5, 3))
    layer_row("layer.fc_sigmoid", layers.Fc(3, 4, "sigmoid", dtype=np.float64,
                                            rng=np.random.default_rng(4)), u(2, 5, 3))

    se_cases = [attention.SeConfig(variant="c", r=2),
                attention.SeConfig(variant="c", r=2, squeeze_op="max"),
                attention.SeConfig(variant="c", r=2, excite_op="relu"),
                attention.SeConfig(variant="c", r=2, excite_op="tanh"),
                attention.SeConfig(variant="tf"),
                attention.SeConfig(variant="tfc-sequential", r=2)]
    se_cases += [attention.SeConfig(variant="tfc-concurrent", aggregation=agg, r=2)
                 for agg in attention.AGGREGATIONS]
    for cfg in se_cases:
        label = cfg.variant
        if cfg.variant == "tfc-concurrent":
            label += f"[{cfg.aggregation}]"
        if cfg.squeeze_op != "avg":
            label += f"[squeeze={cfg.squeeze_op}]"
        if cfg.excite_op != "sigmoid":
            label += f"[excite={cfg.excite_op}]"
        block = attention.make_se_block(cfg, 4, dtype=np.float64,
                                        rng=np.random.default_rng(5))
        layer_row(f"se.{label}", block, u(2, 3, 4, 4))

    tiny = CrnnConfig(frames=4, freq_bins=16, in_channels=2, conv_filters=2,
                      pool_widths=(2, 2, 2), gru_units=4, fc_units=4, num_classes=2,
                      precision="f64", seed=9)
    rows.append(("model.tiny_baseline", check_model(build_model(tiny), u(1, 4, 16, 2),
                                                    rng, h=h), MODEL_TOL))
    tiny_se = CrnnConfig(frames=4, freq_bins=16, in_channels=2, conv_filters=2,
                         pool_widths=(2, 2, 2), gru_units=4, fc_units=4, num_classes=2,
                         precision="f64", seed=9,
                         se=attention.SeConfig(variant="tfc-concurrent",
                                               aggregation="max", r=2))
    rows.append(("model.tiny_attention", check_model(build_model(tiny_se), u(1, 4, 16, 2),
                                                     rng, h=h), MODEL_TOL))
    return rows
