"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

A `Tape` records every primitive as it runs; `Tape.backward` replays the
records in reverse, accumulating gradients into each `Var`. Values are plain
numpy arrays and immutable by convention once produced. A tape is single-use:
build one per training step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tape:
    """Ordered record of primitive ops with enough state for the backward pass."""

    def __init__(self) -> None:
        self._backward_ops: list = []
        self._finished = False

    def var(self, value) -> "Var":
        """Wrap `value` as a differentiable leaf on this tape."""
        return Var(value, self)

    def _record(self, fn) -> None:
        self._backward_ops.append(fn)

    def backward(self, loss: "Var") -> None:
        """Accumulate d(loss)/d(v) into `v.grad` for every Var on the tape."""
        if loss.value.size != 1:
            raise DimensionError("backward requires a scalar loss")
        if self._finished:
            raise RuntimeError("tape already consumed; build a fresh one")
        self._finished = True
        loss.grad[...] = 1.0
        for fn in reversed(self._backward_ops):
            fn()


class Var:
    """A float64 array plus its gradient slot, bound to one tape."""

    __slots__ = ("value", "grad", "tape")

    def __init__(self, value, tape: Tape):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, c):
        if isinstance(c, Var):
            raise TypeError("division only by constants")
        return mul(self, 1.0 / np.asarray(c, dtype=np.float64))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


def _value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(tape: Tape, value: np.ndarray) -> Var:
    return Var(value, tape)


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = _make(tape, av + bv)

    def backward():
        if isinstance(a, Var):
            a.grad += _unbroadcast(out.grad, a.value.shape)
        if isinstance(b, Var):
            b.grad += _unbroadcast(out.grad, b.value.shape)

    tape._record(backward)
    return out


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = _make(tape, av - bv)

    def backward():
        if isinstance(a, Var):
            a.grad += _unbroadcast(out.grad, a.value.shape)
        if isinstance(b, Var):
            b.grad -= _unbroadcast(out.grad, b.value.shape)

    tape._record(backward)
    return out


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = _make(tape, av * bv)

    def backward():
        if isinstance(a, Var):
            a.grad += _unbroadcast(out.grad * bv, a.value.shape)
        if isinstance(b, Var):
            b.grad += _unbroadcast(out.grad * av, b.value.shape)

    tape._record(backward)
    return out


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul shapes {av.shape} x {bv.shape}")
    out = _make(tape, av @ bv)

    def backward():
        if isinstance(a, Var):
            a.grad += out.grad @ bv.T
        if isinstance(b, Var):
            b.grad += av.T @ out.grad

    tape._record(backward)
    return out


def exp(a: Var) -> Var:
    out = _make(a.tape, np.exp(a.value))

    def backward():
        a.grad += out.grad * out.value

    a.tape._record(backward)
    return out


def log(a: Var) -> Var:
    out = _make(a.tape, np.log(a.value))

    def backward():
        a.grad += out.grad / a.value

    a.tape._record(backward)
    return out


def tanh(a: Var) -> Var:
    out = _make(a.tape, np.tanh(a.value))

    def backward():
        a.grad += out.grad * (1.0 - out.value * out.value)

    a.tape._record(backward)
    return out


def softplus(a: Var) -> Var:
    out = _make(a.tape, np.logaddexp(0.0, a.value))

    def backward():
        a.grad += out.grad * _sigmoid_np(a.value)

    a.tape._record(backward)
    return out


def sigmoid(a: Var) -> Var:
    out = _make(a.tape, _sigmoid_np(a.value))

    def backward():
        a.grad += out.grad * out.value * (1.0 - out.value)

    a.tape._record(backward)
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def vsum(a: Var, axis=None, keepdims: bool = False) -> Var:
    out = _make(a.tape, a.value.sum(axis=axis, keepdims=keepdims))

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.grad += np.broadcast_to(g, a.value.shape)

    a.tape._record(backward)
    return out


def vmean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(vsum(a, axis=axis), 1.0 / n)


def reshape(a: Var, shape) -> Var:
    out = _make(a.tape, a.value.reshape(shape))

    def backward():
        a.grad += out.grad.reshape(a.value.shape)

    a.tape._record(backward)
    return out


def first_cols(a: Var, n: int) -> Var:
    """First `n` columns of a 2-D Var; backward pads the rest with exact zeros."""
    if a.value.ndim != 2 or n > a.value.shape[1]:
        raise DimensionError(f"first_cols({n}) on shape {a.value.shape}")
    out = _make(a.tape, a.value[:, :n].copy())

    def backward():
        a.grad[:, :n] += out.grad

    a.tape._record(backward)
    return out


def logsumexp(a: Var, axis: int) -> Var:
    m = a.value.max(axis=axis, keepdims=True)
    shifted = np.exp(a.value - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out_val = np.squeeze(m + np.log(total), axis=axis)
    out = _make(a.tape, out_val)
    softmax = shifted / total

    def backward():
        a.grad += np.expand_dims(out.grad, axis) * softmax

    a.tape._record(backward)
    return out


def log_softmax(a: Var) -> Var:
    """Row-wise log-softmax with max-subtraction stabilization."""
    m = a.value.max(axis=1, keepdims=True)
    shifted = a.value - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = _make(a.tape, shifted - lse)

    def backward():
        g = out.grad
        a.grad += g - np.exp(out.value) * g.sum(axis=1, keepdims=True)

    a.tape._record(backward)
    return out


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    """Inference-path twin of `log_softmax`, no tape."""
    m = x.max(axis=1, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def linear(x, weight, bias) -> Var:
    """x @ weight + bias, bias broadcast per row."""
    xv, wv = _value(x), _value(weight)
    if xv.shape[1] != wv.shape[0]:
        raise DimensionError(f"linear: input cols {xv.shape[1]} != weight rows {wv.shape[0]}")
    return add(matmul(x, weight), bias)


def gaussian_reparameterize(mean, log_variance, noise) -> Var:
    """z = mean + exp(0.5 * log_variance) * noise, noise supplied by the caller."""
    mv, lv, nv = _value(mean), _value(log_variance), _value(noise)
    if not (mv.shape == lv.shape == nv.shape):
        raise DimensionError("reparameterize: mean/log_variance/noise shapes differ")
    return add(mean, mul(exp(mul(log_variance, 0.5)), noise))


def kl_diag_gaussian_vs_standard(mean, log_variance) -> Var:
    """Per-row KL(N(mu, diag sigma^2) || N(0, I)) = 0.5 * sum(mu^2 + s^2 - log s^2 - 1)."""
    mv, lv = _value(mean), _value(log_variance)
    if mv.shape != lv.shape:
        raise DimensionError("kl: mean/log_variance shapes differ")
    inner = sub(add(mul(mean, mean), exp(log_variance)), add(log_variance, 1.0))
    return mul(vsum(inner, axis=1), 0.5)


def kl_diag_gaussian_vs_standard_np(mean: np.ndarray, log_variance: np.ndarray) -> np.ndarray:
    return 0.5 * (mean**2 + np.exp(log_variance) - log_variance - 1.0).sum(axis=1)


def multinomial_nll(x, log_pi: Var) -> Var:
    """Per-row -sum_i x_i * log pi_i; x is a constant binary matrix."""
    xv = _value(x)
    if xv.shape != log_pi.value.shape:
        raise DimensionError("multinomial_nll: shapes differ")
    return mul(vsum(mul(log_pi, xv), axis=1), -1.0)


def diag_gaussian_logpdf(z, mean, log_variance) -> Var:
    """Element-wise log N(z; mean, exp(log_variance)); shapes broadcast."""
    diff = sub(z, mean)
    return mul(add(add(mul(mul(diff, diff), exp(mul(log_variance, -1.0))),
                       log_variance), LOG_2PI), -0.5)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Bias-corrected Adam accumulators, keyed like the parameter dict."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(params: dict, grads: dict, state: OptimizerState) -> dict:
    """One in-place Adam update; returns `params` for convenience."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad shape {g.shape} != param {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradientCheckReport:
    max_rel_error: float
    tolerance: float
    worst: list  # (param name, flat index, analytic, numeric, rel error)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


class GradientCheckError(AssertionError):
    def __init__(self, report: GradientCheckReport):
        self.report = report
        lines = [f"gradient check failed: max rel error {report.max_rel_error:.3e} "
                 f"> tolerance {report.tolerance:.1e}; worst coordinates:"]
        for name, idx, ana, num, rel in report.worst:
            lines.append(f"  {name}[{idx}]: tape={ana:.6e} fd={num:.6e} rel={rel:.3e}")
        super().__init__("\n".join(lines))


def gradient_check(loss_fn, params: dict, tolerance: float = 1e-4,
                   max_coords_per_param: int | None = None,
                   rng: np.random.Generator | None = None) -> GradientCheckReport:
    """Compare `loss_fn` tape gradients against central finite differences.

    loss_fn(params) must return (scalar loss, grads dict). The step size
    adapts to each coordinate's scale. Raises GradientCheckError when the
    tolerance is exceeded.
    """
    _, grads = loss_fn(params)
    records = []
    for name, p in params.items():
        flat = p.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords_per_param is not None and flat.size > max_coords_per_param:
            gen = rng if rng is not None else np.random.default_rng(0)
            idxs = gen.choice(flat.size, size=max_coords_per_param, replace=False)
        gflat = grads[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            h = 1e-6 * max(1.0, abs(orig))
            flat[i] = orig + h
            f_plus = loss_fn(params)[0]
            flat[i] = orig - h
            f_minus = loss_fn(params)[0]
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = gflat[i]
            denom = max(1e-8, abs(analytic) + abs(numeric))
            rel = abs(analytic - numeric) / denom
            records.append((name, int(i), float(analytic), float(numeric), float(rel)))
    records.sort(key=lambda r: -r[4])
    report = GradientCheckReport(max_rel_error=records[0][4] if records else 0.0,
                                 tolerance=tolerance, worst=records[:5])
    if not report.passed:
        raise GradientCheckError(report)
    return report
