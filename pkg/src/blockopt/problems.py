"""Desk-scale test problems with closed-form gradients.

Four problem kinds share one interface:

* ``quadratic``      0.5 x'Ax - b'x with SPD ``A`` (deterministic)
* ``rosenbrock``     the classic banana valley (deterministic)
* ``logistic_regression``  binary logistic loss on synthetic data (stochastic)
* ``mlp1``           one-tanh-hidden-layer regression on synthetic data
                     (stochastic, nonconvex)

Stochastic kinds carry an (n, d_in) feature matrix and length-n labels and
accept a minibatch index list; deterministic kinds reject one. Every kind
adds the same decoupled ridge penalty ``0.5 * l2_reg * |x|^2`` (gradient
``l2_reg * x``), applied on full batches and minibatches alike, so the mean
of single-sample gradients equals the full-batch gradient.

All gradients are hand-derived; ``finite_diff_check`` exists to keep them
honest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .blocks import BlockedVector, BlockLayout, partition

PROBLEM_KINDS = ("quadratic", "rosenbrock", "logistic_regression", "mlp1")


@dataclass(frozen=True)
class EvalResult:
    loss: float
    grad: BlockedVector


@dataclass(frozen=True, eq=False)
class Problem:
    """A differentiable objective plus the block layout its parameters use."""

    kind: str
    layout: BlockLayout
    l2_reg: float = 0.0
    features: np.ndarray | None = None   # (n, d_in), stochastic kinds only
    labels: np.ndarray | None = None     # (n,)
    quad_a: np.ndarray | None = None     # SPD matrix, quadratic only
    quad_b: np.ndarray | None = None
    hidden: int = 0                      # mlp1 only

    @property
    def dim(self) -> int:
        """Parameter dimension (not the feature dimension for mlp1)."""
        return self.layout.total_dim

    @property
    def num_samples(self) -> int:
        """Dataset size; 0 for deterministic kinds."""
        return 0 if self.features is None else self.features.shape[0]

    @property
    def is_stochastic(self) -> bool:
        return self.features is not None


def _resolve_layout(total_dim: int, block_sizes: Sequence[int] | None, default=None) -> BlockLayout:
    layout = partition(default or [total_dim]) if block_sizes is None else partition(block_sizes)
    if layout.total_dim != total_dim:
        raise ValueError(
            f"block sizes cover {layout.total_dim} coordinates, parameter has {total_dim}"
        )
    return layout


def make_quadratic(
    d: int,
    seed: int = 0,
    l2_reg: float = 0.0,
    block_sizes: Sequence[int] | None = None,
    cond: float = 10.0,
) -> Problem:
    """SPD quadratic with eigenvalues spread linearly over [1, cond]."""
    if d < 1 or cond < 1.0:
        raise ValueError("need d >= 1 and cond >= 1")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    a = q @ np.diag(np.linspace(1.0, cond, d)) @ q.T
    a = 0.5 * (a + a.T)
    b = rng.standard_normal(d)
    return Problem(
        kind="quadratic",
        layout=_resolve_layout(d, block_sizes),
        l2_reg=float(l2_reg),
        quad_a=a,
        quad_b=b,
    )


def make_rosenbrock(
    d: int = 2, l2_reg: float = 0.0, block_sizes: Sequence[int] | None = None
) -> Problem:
    if d < 2:
        raise ValueError("rosenbrock needs d >= 2")
    return Problem(
        kind="rosenbrock", layout=_resolve_layout(d, block_sizes), l2_reg=float(l2_reg)
    )


def make_logistic(
    n: int = 1000,
    d: int = 20,
    seed: int = 0,
    l2_reg: float = 0.01,
    flip_prob: float = 0.1,
    block_sizes: Sequence[int] | None = None,
) -> Problem:
    """Separable-then-flipped labels: y = sign(X w_true) with label noise."""
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    w_true = rng.standard_normal(d)
    y = np.sign(x @ w_true)
    y[y == 0] = 1.0
    flips = rng.random(n) < flip_prob
    y[flips] *= -1.0
    return Problem(
        kind="logistic_regression",
        layout=_resolve_layout(d, block_sizes),
        l2_reg=float(l2_reg),
        features=x,
        labels=y,
    )


def make_mlp1(
    n: int = 200,
    d: int = 8,
    seed: int = 0,
    l2_reg: float = 0.0,
    hidden: int = 8,
    noise: float = 0.05,
    block_sizes: Sequence[int] | None = None,
) -> Problem:
    """Teacher-student regression through one tanh hidden layer.

    Parameters flatten as [W1 (hidden x d, row-major), b1, w2, b2]; the
    default layout has one block per layer tensor.
    """
    if n < 1 or d < 1 or hidden < 1:
        raise ValueError("need n, d, hidden >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    w1 = rng.standard_normal((hidden, d)) / np.sqrt(d)
    b1 = 0.1 * rng.standard_normal(hidden)
    w2 = rng.standard_normal(hidden) / np.sqrt(hidden)
    b2 = 0.1 * rng.standard_normal()
    y = np.tanh(x @ w1.T + b1) @ w2 + b2 + noise * rng.standard_normal(n)
    total = hidden * d + hidden + hidden + 1
    layout = _resolve_layout(total, block_sizes, default=[hidden * d, hidden, hidden, 1])
    return Problem(
        kind="mlp1",
        layout=layout,
        l2_reg=float(l2_reg),
        features=x,
        labels=y,
        hidden=hidden,
    )


def make_problem(
    kind: str,
    d: int,
    n: int = 0,
    seed: int = 0,
    l2_reg: float = 0.0,
    block_sizes: Sequence[int] | None = None,
    **kind_kwargs,
) -> Problem:
    """Factory dispatch used by experiment configs; ``d`` is the input dim."""
    if kind == "quadratic":
        return make_quadratic(d, seed, l2_reg, block_sizes, **kind_kwargs)
    if kind == "rosenbrock":
        return make_rosenbrock(d, l2_reg, block_sizes)
    if kind == "logistic_regression":
        return make_logistic(n, d, seed, l2_reg, block_sizes=block_sizes, **kind_kwargs)
    if kind == "mlp1":
        return make_mlp1(n, d, seed, l2_reg, block_sizes=block_sizes, **kind_kwargs)
    raise ValueError(f"unknown problem kind {kind!r}; expected one of {PROBLEM_KINDS}")


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # piecewise to avoid overflow in exp for large |t|
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _unpack_mlp(x: np.ndarray, d_in: int, hidden: int):
    w1 = x[: hidden * d_in].reshape(hidden, d_in)
    b1 = x[hidden * d_in : hidden * d_in + hidden]
    w2 = x[hidden * d_in + hidden : hidden * d_in + 2 * hidden]
    b2 = x[-1]
    return w1, b1, w2, b2


def _mlp_forward_backward(problem: Problem, x: np.ndarray, rows: np.ndarray, y: np.ndarray):
    d_in = problem.features.shape[1]
    w1, b1, w2, b2 = _unpack_mlp(x, d_in, problem.hidden)
    h = np.tanh(rows @ w1.T + b1)            # (B, hidden)
    pred = h @ w2 + b2                        # (B,)
    err = pred - y
    batch = rows.shape[0]
    loss = 0.5 * float(np.mean(err**2))
    e = err / batch
    g_w2 = h.T @ e
    g_b2 = float(np.sum(e))
    dh = (e[:, None] * w2[None, :]) * (1.0 - h**2)  # (B, hidden)
    g_w1 = dh.T @ rows
    g_b1 = dh.sum(axis=0)
    grad = np.concatenate([g_w1.ravel(), g_b1, g_w2, [g_b2]])
    return loss, grad


def eval_objective(
    problem: Problem,
    x: BlockedVector | np.ndarray,
    indices: Sequence[int] | np.ndarray | None = None,
) -> EvalResult:
    """Loss and gradient at ``x``, optionally on a minibatch of sample rows.

    Deterministic kinds raise ValueError when ``indices`` is not None. The
    ridge term ``0.5 * l2_reg * |x|^2`` is always included.
    """
    data = x.data if isinstance(x, BlockedVector) else np.asarray(x, dtype=np.float64)
    if data.shape != (problem.dim,):
        raise ValueError(f"expected parameter shape ({problem.dim},), got {data.shape}")

    if problem.kind == "quadratic":
        if indices is not None:
            raise ValueError("quadratic is deterministic and takes no sample indices")
        ax = problem.quad_a @ data
        loss = 0.5 * float(data @ ax) - float(problem.quad_b @ data)
        grad = ax - problem.quad_b
    elif problem.kind == "rosenbrock":
        if indices is not None:
            raise ValueError("rosenbrock is deterministic and takes no sample indices")
        head, tail = data[:-1], data[1:]
        gap = tail - head**2
        loss = float(np.sum(100.0 * gap**2 + (1.0 - head) ** 2))
        grad = np.zeros_like(data)
        grad[:-1] += -400.0 * head * gap - 2.0 * (1.0 - head)
        grad[1:] += 200.0 * gap
    elif problem.kind == "logistic_regression":
        rows, y = _select_rows(problem, indices)
        margins = y * (rows @ data)
        loss = float(np.mean(np.logaddexp(0.0, -margins)))
        coeff = -y * _sigmoid(-margins) / rows.shape[0]
        grad = rows.T @ coeff
    elif problem.kind == "mlp1":
        rows, y = _select_rows(problem, indices)
        loss, grad = _mlp_forward_backward(problem, data, rows, y)
    else:
        raise ValueError(f"unknown problem kind {problem.kind!r}")

    if problem.l2_reg != 0.0:
        loss += 0.5 * problem.l2_reg * float(data @ data)
        grad = grad + problem.l2_reg * data
    return EvalResult(loss, BlockedVector(np.asarray(grad, dtype=np.float64), problem.layout))


def _select_rows(problem: Problem, indices) -> tuple[np.ndarray, np.ndarray]:
    if indices is None:
        return problem.features, problem.labels
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("minibatch index list must be a non-empty 1-d sequence")
    if idx.min() < 0 or idx.max() >= problem.num_samples:
        raise ValueError("minibatch index out of range")
    return problem.features[idx], problem.labels[idx]


def per_sample_gradients(problem: Problem, x: BlockedVector | np.ndarray) -> np.ndarray:
    """(n, dim) matrix whose row i is the gradient of sample i's loss at ``x``.

    Rows include the shared ridge term, so their mean equals the full-batch
    gradient. Only defined for stochastic kinds.
    """
    if not problem.is_stochastic:
        raise ValueError(f"{problem.kind} has no per-sample decomposition")
    data = x.data if isinstance(x, BlockedVector) else np.asarray(x, dtype=np.float64)

    if problem.kind == "logistic_regression":
        margins = problem.labels * (problem.features @ data)
        coeff = -problem.labels * _sigmoid(-margins)
        grads = coeff[:, None] * problem.features
    else:  # mlp1
        d_in = problem.features.shape[1]
        w1, b1, w2, _ = _unpack_mlp(data, d_in, problem.hidden)
        h = np.tanh(problem.features @ w1.T + b1)
        pred = h @ w2 + data[-1]
        err = pred - problem.labels
        dh = (err[:, None] * w2[None, :]) * (1.0 - h**2)        # (n, hidden)
        g_w1 = dh[:, :, None] * problem.features[:, None, :]     # (n, hidden, d_in)
        grads = np.concatenate(
            [g_w1.reshape(problem.num_samples, -1), dh, err[:, None] * h, err[:, None]],
            axis=1,
        )
    if problem.l2_reg != 0.0:
        grads = grads + problem.l2_reg * data[None, :]
    return grads


def initial_point(problem: Problem, seed: int = 0) -> BlockedVector:
    """Small random start; shared by the harness and the test suite."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    return BlockedVector(rng.uniform(-0.1, 0.1, problem.dim), problem.layout)


def reference_optimum(problem: Problem, tol: float = 1e-10) -> tuple[BlockedVector, float]:
    """Certified minimizer and its loss, where one is available.

    quadratic: direct solve. rosenbrock (unregularized): the all-ones point.
    logistic with l2_reg > 0: full-batch gradient descent run until
    ``|grad| <= tol``. mlp1 has no certified optimum and raises.
    """
    if problem.kind == "quadratic":
        d = problem.dim
        x_star = np.linalg.solve(problem.quad_a + problem.l2_reg * np.eye(d), problem.quad_b)
    elif problem.kind == "rosenbrock":
        if problem.l2_reg != 0.0:
            raise ValueError("rosenbrock reference optimum requires l2_reg == 0")
        x_star = np.ones(problem.dim)
    elif problem.kind == "logistic_regression":
        if problem.l2_reg <= 0.0:
            raise ValueError("logistic reference optimum requires l2_reg > 0")
        n = problem.num_samples
        lip = np.linalg.norm(problem.features, 2) ** 2 / (4.0 * n) + problem.l2_reg
        step = 1.0 / lip
        x_star = np.zeros(problem.dim)
        for _ in range(500_000):
            res = eval_objective(problem, x_star)
            if np.linalg.norm(res.grad.data) <= tol:
                break
            x_star = x_star - step * res.grad.data
        else:
            raise RuntimeError(f"gradient descent did not certify |grad| <= {tol}")
    else:
        raise ValueError(f"no certified optimum for problem kind {problem.kind!r}")

    point = BlockedVector(np.asarray(x_star, dtype=np.float64), problem.layout)
    check = eval_objective(problem, point)
    if problem.kind != "rosenbrock" and np.linalg.norm(check.grad.data) > max(tol, 1e-8):
        raise RuntimeError("reference optimum failed its own gradient check")
    return point, check.loss


def finite_diff_check(
    problem: Problem, x: BlockedVector | np.ndarray, h: float = 1e-5
) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    Returns ``max_i |g_i - fd_i| / max(1, |g|_inf)`` on the full batch.
    """
    data = x.data if isinstance(x, BlockedVector) else np.asarray(x, dtype=np.float64)
    analytic = eval_objective(problem, data).grad.data
    fd = np.zeros_like(data)
    for i in range(data.shape[0]):
        bump = np.zeros_like(data)
        bump[i] = h
        f_plus = eval_objective(problem, data + bump).loss
        f_minus = eval_objective(problem, data - bump).loss
        fd[i] = (f_plus - f_minus) / (2.0 * h)
    scale = max(1.0, float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(analytic - fd))) / scale
