"""Finite-difference verification of the backward rules.

A check turns an op's (possibly non-scalar) output into the scalar
``sum(out * R)`` for a fixed random ``R`` and compares the reverse-mode
gradient with central differences. Two flavours:

* elementwise: every scalar of every input is perturbed; the error is
  ``||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, floor)``.
* directional: for large inputs, the derivative along a few unit
  directions (one along the analytic gradient, the rest random) is
  compared; the error is ``|d_ad - d_fd| / max(||g_ad||, floor)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .ops import ConvParams, DenseParams, same_padding
from .tensor import Tensor, grad

STEP = 1e-3
TOLERANCE = {np.dtype(np.float64): 1e-4, np.dtype(np.float32): 1e-2}
_FLOOR = 1e-8


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    per_input: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst)) and self.worst <= self.tolerance


def _scalarize(out: Tensor, weights: np.ndarray) -> float:
    return float(np.sum(out.data.astype(np.float64) * weights))


def _directional_error(t: Tensor, g_ad: np.ndarray, dirs: list[np.ndarray],
                       f: Callable[[], float], step: float) -> float:
    base = t.data.copy()
    g_norm = float(np.linalg.norm(g_ad))
    worst = 0.0
    for v in dirs:
        t.data = (base + step * v).astype(t.dtype)
        plus = f()
        t.data = (base - step * v).astype(t.dtype)
        minus = f()
        d_fd = (plus - minus) / (2 * step)
        worst = max(worst, abs(float(np.sum(g_ad * v)) - d_fd) / max(g_norm, _FLOOR))
    t.data = base
    return worst


def _elementwise_error(t: Tensor, g_ad: np.ndarray, f: Callable[[], float], step: float) -> float:
    base = t.data.copy()
    g_fd = np.zeros(t.shape)
    flat = t.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        plus = f()
        flat[i] = old - step
        minus = f()
        flat[i] = old
        g_fd.reshape(-1)[i] = (plus - minus) / (2 * step)
    t.data = base
    denom = max(float(np.linalg.norm(g_ad)), float(np.linalg.norm(g_fd)), _FLOOR)
    return float(np.linalg.norm(g_ad - g_fd)) / denom


def check(name: str, fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[Tensor],
          rng: np.random.Generator, *, labels: Sequence[str] | None = None,
          step: float | Sequence[float] = STEP, directional: bool = False, n_directions: int = 3,
          tolerance: float | None = None) -> CheckResult:
    """Compare ``grad`` of ``fn(inputs)`` against central differences.

    ``step`` may be a ladder of step sizes: an input that misses the
    tolerance at one step is retried at the next and keeps its smallest
    error. Truncation (kinks) and round-off pull in opposite directions as
    the step shrinks, whereas a wrong backward rule fails at every step.
    """
    inputs = list(inputs)
    labels = list(labels) if labels is not None else [f"arg{i}" for i in range(len(inputs))]
    steps = [float(step)] if np.isscalar(step) else [float(h) for h in step]
    dtype = np.result_type(*(t.dtype for t in inputs))
    tol = TOLERANCE[np.dtype(dtype)] if tolerance is None else tolerance

    out = fn(inputs)
    weights = rng.standard_normal(out.shape)
    analytic = grad(out, inputs, grad_output=weights.astype(out.dtype))

    def f() -> float:
        return _scalarize(fn(inputs), weights)

    per_input = {}
    for label, t, g_ad in zip(labels, inputs, analytic):
        g_ad = g_ad.astype(np.float64)
        if directional:
            g_norm = float(np.linalg.norm(g_ad))
            dirs = [g_ad / g_norm] if g_norm > 0 else []
            while len(dirs) < n_directions:
                v = rng.standard_normal(t.shape)
                dirs.append(v / np.linalg.norm(v))
        best = np.inf
        for h in steps:
            err = _directional_error(t, g_ad, dirs, f, h) if directional \
                else _elementwise_error(t, g_ad, f, h)
            best = min(best, err)
            if best <= tol:
                break
        per_input[label] = best
    return CheckResult(name, max(per_input.values(), default=0.0), tol, per_input)


# --------------------------------------------------------------------------
# per-op cases; each builder returns (fn, inputs, labels)


def _param(rng, shape, dtype, scale=1.0):
    return Tensor((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=True)


def _away_from_zero(rng, shape, dtype, margin=0.05):
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)
    return Tensor(x.astype(dtype), requires_grad=True)


def _distinct(rng, shape, dtype, gap=0.02):
    # values pairwise at least `gap` apart, so a small step never changes an argmax
    size = int(np.prod(shape))
    vals = (rng.permutation(size) * gap - size * gap / 2).reshape(shape)
    return Tensor(vals.astype(dtype), requires_grad=True)


def _conv_case(k: int, padding=None):
    def build(rng, dtype):
        x = _param(rng, (2, 3, 6, 5), dtype)
        p = ConvParams(_param(rng, (2, 3, k, k), dtype, 0.3), _param(rng, (2,), dtype))
        pad = same_padding(k) if padding is None else padding
        return (lambda a: ops.conv2d(a[0], ConvParams(a[1], a[2]), pad)), [x, p.weight, p.bias], \
            ["input", "weight", "bias"]
    return build


def _conv_multi_case(rng, dtype):
    x = _param(rng, (2, 3, 6, 6), dtype)
    ts = []
    for k, co in ((3, 3), (4, 2), (5, 2)):
        ts += [_param(rng, (co, 3, k, k), dtype, 0.3), _param(rng, (co,), dtype)]

    def fn(a):
        convs = [(ConvParams(a[1 + 2 * i], a[2 + 2 * i]), same_padding(k))
                 for i, k in enumerate((3, 4, 5))]
        return ops.conv2d_multi(a[0], convs)
    labels = ["input", "w3", "b3", "w4", "b4", "w5", "b5"]
    return fn, [x] + ts, labels


def _unary(op_name, maker=_param, shape=(2, 3, 4, 4)):
    def build(rng, dtype):
        return (lambda a: getattr(ops, op_name)(a[0])), [maker(rng, shape, dtype)], ["input"]
    return build


def _pool(op_name, kind):
    def build(rng, dtype):
        maker = _distinct if kind == "max" else _param
        x = maker(rng, (2, 3, 4, 3), dtype)
        return (lambda a: getattr(ops, op_name)(a[0], kind)), [x], ["input"]
    return build


def _concat_case(rng, dtype):
    parts = [_param(rng, (2, c, 3, 3), dtype) for c in (3, 1, 2)]
    return (lambda a: ops.concat_channels(a)), parts, ["part0", "part1", "part2"]


def _slice_case(rng, dtype):
    return (lambda a: ops.slice_channels(a[0], 1, 4)), [_param(rng, (2, 5, 3, 3), dtype)], ["input"]


def _bmul_case(form):
    def build(rng, dtype):
        x = _param(rng, (2, 3, 4, 4), dtype)
        gate = _param(rng, (2, 3, 1, 1) if form == "channel" else (2, 1, 4, 4), dtype)
        return (lambda a: ops.broadcast_mul(a[0], a[1])), [x, gate], ["input", "map"]
    return build


def _dense_case(rng, dtype):
    x = _param(rng, (3, 5), dtype)
    p = DenseParams(_param(rng, (4, 5), dtype), _param(rng, (4,), dtype))
    return (lambda a: ops.dense(a[0], DenseParams(a[1], a[2]))), [x, p.weight, p.bias], \
        ["input", "weight", "bias"]


def _mse_case(rng, dtype):
    a, b = _param(rng, (2, 3, 4, 4), dtype), _param(rng, (2, 3, 4, 4), dtype)
    return (lambda t: ops.mse(t[0], t[1])), [a, b], ["a", "b"]


def _add_case(rng, dtype):
    a, b = _param(rng, (2, 3), dtype), _param(rng, (2, 3), dtype)
    return (lambda t: ops.add(t[0], t[1])), [a, b], ["a", "b"]


def _scale_case(rng, dtype):
    return (lambda t: ops.scale(t[0], 0.7)), [_param(rng, (2, 3, 2, 2), dtype)], ["input"]


def _reshape_case(rng, dtype):
    return (lambda t: ops.reshape(t[0], (2, 12))), [_param(rng, (2, 3, 2, 2), dtype)], ["input"]


OP_CASES: dict[str, Callable] = {
    "conv2d[k1]": _conv_case(1),
    "conv2d[k3]": _conv_case(3),
    "conv2d[k4]": _conv_case(4),
    "conv2d[k5]": _conv_case(5),
    "conv2d[k3,pad(0,2,1,0)]": _conv_case(3, (0, 2, 1, 0)),
    "conv2d_multi[3,4,5]": _conv_multi_case,
    "relu": _unary("relu", _away_from_zero),
    "sigmoid": _unary("sigmoid"),
    "concat_channels": _concat_case,
    "slice_channels": _slice_case,
    "global_pool[avg]": _pool("global_pool", "avg"),
    "global_pool[max]": _pool("global_pool", "max"),
    "channel_pool[avg]": _pool("channel_pool", "avg"),
    "channel_pool[max]": _pool("channel_pool", "max"),
    "broadcast_mul[channel]": _bmul_case("channel"),
    "broadcast_mul[spatial]": _bmul_case("spatial"),
    "dense": _dense_case,
    "mse": _mse_case,
    "add": _add_case,
    "scale": _scale_case,
    "reshape": _reshape_case,
}


def check_ops(seed: int = 0, dtype=np.float64) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, build in OP_CASES.items():
        fn, inputs, labels = build(rng, dtype)
        results.append(check(name, fn, inputs, rng, labels=labels))
    return results
