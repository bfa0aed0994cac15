"""Extended-precision reference transcriptions of the update rules.

Each function below replays an optimizer as naive per-coordinate scalar
loops in ``np.longdouble`` (80-bit on x86), written directly from the
update-rule definitions. Nothing here is shared with ``blockopt.optimizers``;
that separation is the point: the production float64 code is validated by
comparing whole trajectories against these transcriptions on identical
gradient streams.

Conventions shared by all transcriptions:

* step counter ``t`` is 1-indexed and drives the bias corrections
  ``1 - beta1**t`` and ``1 - beta2**t``;
* a trust scale ``phi(|x|) / |u|`` degrades to 1.0 whenever either norm
  is exactly zero;
* per-block gradient normalization maps an exactly-zero block to zeros
  under the ``zero_passthrough`` policy, and divides by ``|g| + floor``
  under ``epsilon_floor``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

LD = np.longdouble

ZERO_PASSTHROUGH = "zero_passthrough"
EPSILON_FLOOR = "epsilon_floor"


def identity_scale(value: LD) -> LD:
    return value

def make_clamp(lo: float, hi: float) -> Callable[[LD], LD]:
    lo_ld, hi_ld = LD(lo), LD(hi)

    def clamp(value: LD) -> LD:
        if value < lo_ld:
            return lo_ld
        if value > hi_ld:
            return hi_ld
        return value

    return clamp


def _norm(vec: np.ndarray, lo: int, hi: int) -> LD:
    acc = LD(0)
    for i in range(lo, hi):
        acc += vec[i] * vec[i]
    return np.sqrt(acc)


def _block_bounds(block_sizes: Sequence[int]) -> list[tuple[int, int]]:
    bounds, start = [], 0
    for size in block_sizes:
        bounds.append((start, start + size))
        start += size
    return bounds


def _normalize_block(
    g: np.ndarray, lo: int, hi: int, policy: str, floor: LD
) -> np.ndarray:
    out = np.zeros(hi - lo, dtype=LD)
    nrm = _norm(g, lo, hi)
    if policy == ZERO_PASSTHROUGH:
        if nrm == 0:
            return out
        for i in range(lo, hi):
            out[i - lo] = g[i] / nrm
    elif policy == EPSILON_FLOOR:
        denom = nrm + floor
        for i in range(lo, hi):
            out[i - lo] = g[i] / denom
    else:
        raise ValueError(f"unknown zero-gradient policy {policy!r}")
    return out


def _as_decay(weight_decay, num_blocks: int) -> list[LD]:
    if np.isscalar(weight_decay):
        return [LD(weight_decay)] * num_blocks
    vals = [LD(w) for w in weight_decay]
    if len(vals) != num_blocks:
        raise ValueError("per-block weight decay length mismatch")
    return vals


def lamb_trajectory(
    x0: np.ndarray,
    block_sizes: Sequence[int],
    grads: Sequence[np.ndarray],
    etas: Sequence[float],
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-6,
    weight_decay=0.0,
    phi: Callable[[LD], LD] = identity_scale,
    normalize_grads: bool = False,
    zero_grad_policy: str = ZERO_PASSTHROUGH,
    normalize_eps: float = 1e-16,
) -> list[np.ndarray]:
    """Replay LAMB in extended precision; returns params after each step."""
    bounds = _block_bounds(block_sizes)
    decay = _as_decay(weight_decay, len(bounds))
    b1, b2, eps = LD(beta1), LD(beta2), LD(epsilon)
    floor = LD(normalize_eps)
    one = LD(1)

    x = np.asarray(x0, dtype=LD).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    out: list[np.ndarray] = []

    for t, (g64, eta) in enumerate(zip(grads, etas), start=1):
        g = np.asarray(g64, dtype=LD)
        c1 = one - b1 ** LD(t)
        c2 = one - b2 ** LD(t)
        for b, (lo, hi) in enumerate(bounds):
            if normalize_grads:
                gb = _normalize_block(g, lo, hi, zero_grad_policy, floor)
            else:
                gb = g[lo:hi].copy()
            lam = decay[b]
            u = np.zeros(hi - lo, dtype=LD)
            for i in range(lo, hi):
                j = i - lo
                m[i] = b1 * m[i] + (one - b1) * gb[j]
                v[i] = b2 * v[i] + (one - b2) * gb[j] * gb[j]
                r = (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
                u[j] = r + lam * x[i]
            xn = _norm(x, lo, hi)
            un = _norm(u, 0, hi - lo)
            scale = phi(xn) / un if (xn != 0 and un != 0) else one
            step = LD(eta) * scale
            for i in range(lo, hi):
                x[i] = x[i] - step * u[i - lo]
        out.append(x.copy())
    return out


def lans_trajectory(
    x0: np.ndarray,
    block_sizes: Sequence[int],
    grads: Sequence[np.ndarray],
    etas: Sequence[float],
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-6,
    weight_decay=0.0,
    phi: Callable[[LD], LD] = identity_scale,
    zero_grad_policy: str = ZERO_PASSTHROUGH,
    normalize_eps: float = 1e-16,
) -> list[np.ndarray]:
    """Replay LANS in extended precision; returns params after each step.

    The gradient is normalized per block before entering the moments; the
    update is the convex combination ``beta1 * momentum branch +
    (1 - beta1) * gradient branch`` with an independent trust scale per
    branch. The gradient branch is not bias-corrected in the numerator;
    both branches share the beta2-corrected denominator.
    """
    bounds = _block_bounds(block_sizes)
    decay = _as_decay(weight_decay, len(bounds))
    b1, b2, eps = LD(beta1), LD(beta2), LD(epsilon)
    floor = LD(normalize_eps)
    one = LD(1)

    x = np.asarray(x0, dtype=LD).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    out: list[np.ndarray] = []

    for t, (g64, eta) in enumerate(zip(grads, etas), start=1):
        g = np.asarray(g64, dtype=LD)
        c1 = one - b1 ** LD(t)
        c2 = one - b2 ** LD(t)
        for b, (lo, hi) in enumerate(bounds):
            gt = _normalize_block(g, lo, hi, zero_grad_policy, floor)
            lam = decay[b]
            size = hi - lo
            ur = np.zeros(size, dtype=LD)
            uc = np.zeros(size, dtype=LD)
            for i in range(lo, hi):
                j = i - lo
                m[i] = b1 * m[i] + (one - b1) * gt[j]
                v[i] = b2 * v[i] + (one - b2) * gt[j] * gt[j]
                denom = np.sqrt(v[i] / c2) + eps
                r = (m[i] / c1) / denom
                c = gt[j] / denom
                ur[j] = r + lam * x[i]
                uc[j] = c + lam * x[i]
            xn = _norm(x, lo, hi)
            rn = _norm(ur, 0, size)
            cn = _norm(uc, 0, size)
            sr = phi(xn) / rn if (xn != 0 and rn != 0) else one
            sc = phi(xn) / cn if (xn != 0 and cn != 0) else one
            eta_ld = LD(eta)
            for i in range(lo, hi):
                j = i - lo
                d = b1 * sr * ur[j] + (one - b1) * sc * uc[j]
                x[i] = x[i] - eta_ld * d
        out.append(x.copy())
    return out


def adamw_trajectory(
    x0: np.ndarray,
    block_sizes: Sequence[int],
    grads: Sequence[np.ndarray],
    etas: Sequence[float],
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-6,
    weight_decay=0.0,
    normalize_grads: bool = False,
    zero_grad_policy: str = ZERO_PASSTHROUGH,
    normalize_eps: float = 1e-16,
) -> list[np.ndarray]:
    """Replay AdamW (decoupled decay, no trust scaling) in extended precision."""
    bounds = _block_bounds(block_sizes)
    decay = _as_decay(weight_decay, len(bounds))
    b1, b2, eps = LD(beta1), LD(beta2), LD(epsilon)
    floor = LD(normalize_eps)
    one = LD(1)

    x = np.asarray(x0, dtype=LD).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    out: list[np.ndarray] = []

    for t, (g64, eta) in enumerate(zip(grads, etas), start=1):
        g = np.asarray(g64, dtype=LD)
        c1 = one - b1 ** LD(t)
        c2 = one - b2 ** LD(t)
        eta_ld = LD(eta)
        for b, (lo, hi) in enumerate(bounds):
            if normalize_grads:
                gb = _normalize_block(g, lo, hi, zero_grad_policy, floor)
            else:
                gb = g[lo:hi].copy()
            lam = decay[b]
            for i in range(lo, hi):
                j = i - lo
                m[i] = b1 * m[i] + (one - b1) * gb[j]
                v[i] = b2 * v[i] + (one - b2) * gb[j] * gb[j]
                r = (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
                x[i] = x[i] - eta_ld * (r + lam * x[i])
        out.append(x.copy())
    return out


def sgd_momentum_trajectory(
    x0: np.ndarray,
    grads: Sequence[np.ndarray],
    etas: Sequence[float],
    *,
    mu: float = 0.9,
) -> list[np.ndarray]:
    """Replay classic momentum: ``m' = mu m + g``, ``x' = x - eta m'``."""
    mu_ld = LD(mu)
    x = np.asarray(x0, dtype=LD).copy()
    m = np.zeros_like(x)
    out: list[np.ndarray] = []
    for g64, eta in zip(grads, etas):
        g = np.asarray(g64, dtype=LD)
        eta_ld = LD(eta)
        for i in range(x.shape[0]):
            m[i] = mu_ld * m[i] + g[i]
            x[i] = x[i] - eta_ld * m[i]
        out.append(x.copy())
    return out


def nag_trajectory(
    x0: np.ndarray,
    grads: Sequence[np.ndarray],
    etas: Sequence[float],
    *,
    mu: float = 0.9,
) -> list[np.ndarray]:
    """Replay Nesterov momentum: ``m' = mu m + g``, ``x' = x - eta (mu m' + g)``."""
    mu_ld = LD(mu)
    x = np.asarray(x0, dtype=LD).copy()
    m = np.zeros_like(x)
    out: list[np.ndarray] = []
    for g64, eta in zip(grads, etas):
        g = np.asarray(g64, dtype=LD)
        eta_ld = LD(eta)
        for i in range(x.shape[0]):
            m[i] = mu_ld * m[i] + g[i]
            x[i] = x[i] - eta_ld * (mu_ld * m[i] + g[i])
        out.append(x.copy())
    return out


def max_relative_deviation(
    produced: Sequence[np.ndarray], reference: Sequence[np.ndarray]
) -> float:
    """Worst normwise-relative gap between two parameter trajectories.

    Per step: ``max_i |a_i - b_i| / max(|a|_inf, |b|_inf)``, then the max
    over steps. Normwise (rather than per-coordinate) so that coordinates
    crossing zero do not blow the ratio up; both trajectories are promoted
    to extended precision before differencing.
    """
    if len(produced) != len(reference):
        raise ValueError("trajectories have different lengths")
    worst = 0.0
    for a64, b_ld in zip(produced, reference):
        a = np.asarray(a64, dtype=LD)
        b = np.asarray(b_ld, dtype=LD)
        num = float(np.max(np.abs(a - b))) if a.size else 0.0
        den = float(max(np.max(np.abs(a)), np.max(np.abs(b)), 0.0))
        if den == 0.0:
            if num != 0.0:
                return float("inf")
            continue
        worst = max(worst, num / den)
    return worst
