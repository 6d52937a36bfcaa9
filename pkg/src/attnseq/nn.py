"""Numeric kernels with hand-derived backward passes.

Every kernel accepts arrays with arbitrary leading (batch) dimensions.
Forward functions that need state for the backward pass return
``(output, cache)``; the matching ``*_backward`` consumes the cache.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

DECAY_GROUPS = ("none", "output_mlp", "scorer")
GATE_NAMES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "W", "U", "b")


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite or degenerate value."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ContractError(msg)


# ---------------------------------------------------------------------------
# parameter store


@dataclass
class Param:
    value: np.ndarray
    trainable: bool = True
    decay_group: str = "none"


class ParamStore:
    """Ordered map from hierarchical names to tensors plus training metadata."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value, trainable: bool = True,
            decay_group: str = "none") -> np.ndarray:
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        if decay_group not in DECAY_GROUPS:
            raise ContractError(f"unknown decay group {decay_group!r}")
        arr = np.array(value, dtype=self.dtype)
        self._entries[name] = Param(arr, trainable, decay_group)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def __setitem__(self, name: str, value) -> None:
        p = self._entries[name]
        value = np.asarray(value, dtype=self.dtype)
        if value.ndim and value.shape != p.value.shape:
            raise ContractError(
                f"{name}: shape {value.shape} does not match {p.value.shape}")
        p.value[...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, name: str) -> Param:
        return self._entries[name]

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._entries if n.startswith(prefix)]

    def trainable_names(self) -> list[str]:
        return [n for n, p in self._entries.items() if p.trainable]

    def set_trainable(self, prefix: str, flag: bool) -> None:
        for n in self.names(prefix):
            self._entries[n].trainable = flag

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Parameters under ``prefix.`` keyed by their last name component."""
        cut = len(prefix) + 1
        return {n[cut:]: p.value for n, p in self._entries.items()
                if n.startswith(prefix + ".")}

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(p.value) for n, p in self._entries.items()}

    def n_scalars(self) -> int:
        return sum(p.value.size for p in self._entries.values())

    def copy(self) -> "ParamStore":
        return self.astype(self.dtype)

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for n, p in self._entries.items():
            out._entries[n] = Param(p.value.astype(dtype), p.trainable, p.decay_group)
        return out


# ---------------------------------------------------------------------------
# elementwise and normalisation kernels


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    return np.tanh(x)


def softmax(v, axis: int = -1):
    v = np.asarray(v)
    _check(v.size > 0 and v.shape[axis] > 0, "softmax of an empty vector")
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_backward(dy, y, axis: int = -1):
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def log_softmax(v, axis: int = -1):
    v = np.asarray(v)
    _check(v.size > 0 and v.shape[axis] > 0, "log_softmax of an empty vector")
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def logsumexp(v, axis: int = -1):
    m = np.max(v, axis=axis, keepdims=True)
    return (m + np.log(np.exp(v - m).sum(axis=axis, keepdims=True))).squeeze(axis)


# ---------------------------------------------------------------------------
# affine


def affine(x, W, b):
    """y = W x + b over the last axis of ``x``."""
    x = np.asarray(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ContractError(
            f"affine: x{tuple(x.shape)} incompatible with W{tuple(W.shape)}, "
            f"b{tuple(b.shape)}")
    return x @ W.T + b


def affine_backward(dy, x, W):
    """Returns (dx, dW, db)."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ W, dy2.T @ x2, dy2.sum(axis=0)


# ---------------------------------------------------------------------------
# maxout


def maxout(x, W, b):
    """Max over ``k`` affine pieces: y_j = max_p (W_p x + b_p)_j.

    ``W`` has shape (k, m, n) and ``b`` (k, m).  Ties go to the lowest
    piece index (``np.argmax`` semantics).
    """
    x = np.asarray(x)
    if W.ndim != 3 or W.shape[0] < 2:
        raise ConfigError(f"maxout needs at least 2 pieces, got W{W.shape}")
    k, m, n = W.shape
    if x.shape[-1] != n or b.shape != (k, m):
        raise ContractError(
            f"maxout: x{tuple(x.shape)} incompatible with W{W.shape}, b{b.shape}")
    z = (x @ W.reshape(k * m, n).T + b.reshape(k * m)).reshape(x.shape[:-1] + (k, m))
    idx = z.argmax(axis=-2)
    y = np.take_along_axis(z, idx[..., None, :], axis=-2)[..., 0, :]
    return y, (x, idx)


def maxout_backward(dy, cache, W):
    """Returns (dx, dW, db); the gradient is routed to the winning piece."""
    x, idx = cache
    k, m, n = W.shape
    dz = np.zeros(dy.shape[:-1] + (k, m), dtype=dy.dtype)
    np.put_along_axis(dz, idx[..., None, :], dy[..., None, :], axis=-2)
    dz2 = dz.reshape(-1, k * m)
    x2 = x.reshape(-1, n)
    dx = dz.reshape(dy.shape[:-1] + (k * m,)) @ W.reshape(k * m, n)
    dW = (dz2.T @ x2).reshape(k, m, n)
    db = dz2.sum(axis=0).reshape(k, m)
    return dx, dW, db


# ---------------------------------------------------------------------------
# gated recurrent step (reset/update gates)


def gate_input_projection(u, P):
    """Input-side pre-activations for the update, reset and candidate paths."""
    return u @ P["Wz"].T + P["bz"], u @ P["Wr"].T + P["br"], u @ P["W"].T + P["b"]


def gated_core(s_prev, xz, xr, xn, P):
    z = sigmoid(xz + s_prev @ P["Uz"].T)
    r = sigmoid(xr + s_prev @ P["Ur"].T)
    rs = r * s_prev
    n = np.tanh(xn + rs @ P["U"].T)
    s = s_prev + z * (n - s_prev)
    return s, (s_prev, z, r, rs, n)


def gated_core_backward(ds, cache, P, grads):
    """Accumulates recurrent-weight grads into ``grads`` (keys Uz, Ur, U).

    Returns (ds_prev, dxz, dxr, dxn).
    """
    s_prev, z, r, rs, n = cache
    dn = ds * z
    dz = ds * (n - s_prev)
    ds_prev = ds * (1.0 - z)
    dxn = dn * (1.0 - n * n)
    drs = dxn @ P["U"]
    grads["U"] += dxn.T @ rs if dxn.ndim == 2 else np.outer(dxn, rs)
    dr = drs * s_prev
    ds_prev += drs * r
    dxz = dz * z * (1.0 - z)
    dxr = dr * r * (1.0 - r)
    if dxz.ndim == 2:
        grads["Uz"] += dxz.T @ s_prev
        grads["Ur"] += dxr.T @ s_prev
    else:
        grads["Uz"] += np.outer(dxz, s_prev)
        grads["Ur"] += np.outer(dxr, s_prev)
    ds_prev += dxz @ P["Uz"] + dxr @ P["Ur"]
    return ds_prev, dxz, dxr, dxn


def gated_step(s_prev, u, P):
    """One reset/update-gated recurrent step.

    z = sigm(Wz u + Uz s + bz), r = sigm(Wr u + Ur s + br),
    n = tanh(W u + U (r * s) + b), s' = (1 - z) s + z n.
    """
    s_prev = np.asarray(s_prev)
    u = np.asarray(u)
    H, D = P["Wz"].shape
    if s_prev.shape[-1] != H or u.shape[-1] != D or P["Uz"].shape != (H, H):
        raise ContractError(
            f"gated_step: state {s_prev.shape} / input {u.shape} incompatible "
            f"with Wz{P['Wz'].shape}, Uz{P['Uz'].shape}")
    xz, xr, xn = gate_input_projection(u, P)
    s, core = gated_core(s_prev, xz, xr, xn, P)
    return s, (u, core)


def gated_step_backward(ds, cache, P):
    """Returns (ds_prev, du, grads) with grads keyed by gate parameter name."""
    u, core = cache
    g = {k: np.zeros_like(P[k]) for k in GATE_NAMES}
    ds_prev, dxz, dxr, dxn = gated_core_backward(ds, core, P, g)
    du = dxz @ P["Wz"] + dxr @ P["Wr"] + dxn @ P["W"]
    for dx, w, bn in ((dxz, "Wz", "bz"), (dxr, "Wr", "br"), (dxn, "W", "b")):
        d2 = dx.reshape(-1, dx.shape[-1])
        g[w] += d2.T @ u.reshape(-1, u.shape[-1])
        g[bn] += d2.sum(axis=0)
    return ds_prev, du, g


# ---------------------------------------------------------------------------
# initialisation


def orthonormal_init(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthonormal matrix from the QR factorisation of a Gaussian."""
    if n < 1:
        raise ContractError("orthonormal_init needs n >= 1")
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


# ---------------------------------------------------------------------------
# finite-difference gradient check


@dataclass
class GradReport:
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    def failures(self) -> dict[str, float]:
        return {n: e for n, e in self.errors.items() if e > self.tol}

    def __str__(self) -> str:
        lines = [f"{n:40s} {e:.3e} {'ok' if e <= self.tol else 'FAIL'}"
                 for n, e in self.errors.items()]
        lines.append(f"max relative error {self.max_error:.3e} (tol {self.tol:g})")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """max |a - n| over a tensor, scaled by the tensor's largest magnitude."""
    scale = max(np.max(np.abs(analytic), initial=0.0),
                np.max(np.abs(numeric), initial=0.0), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / scale)


def gradcheck(loss_fn: Callable[[ParamStore], tuple[float, dict]],
              params: ParamStore, eps: float = 1e-5, tol: float = 1e-4,
              names: list[str] | None = None) -> GradReport:
    """Compare analytic gradients against central differences.

    ``loss_fn(params)`` must return ``(loss, grads)``.  Every scalar of every
    trainable tensor is perturbed in place and restored afterwards.
    """
    loss0, grads = loss_fn(params)
    if not np.isfinite(loss0):
        raise NumericError("gradcheck: loss is non-finite at the base point")
    report = GradReport(tol=tol)
    for name in names if names is not None else params.trainable_names():
        if not params.entry(name).trainable:
            continue
        theta = params[name]
        num = np.zeros_like(theta)
        flat = theta.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp, _ = loss_fn(params)
            flat[j] = orig - eps
            fm, _ = loss_fn(params)
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(
                    f"gradcheck: non-finite loss while perturbing {name}[{j}]")
            num.reshape(-1)[j] = (fp - fm) / (2 * eps)
        report.errors[name] = relative_error(grads[name], num)
    return report
