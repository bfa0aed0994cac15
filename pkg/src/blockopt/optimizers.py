"""Block-wise update rules: LAMB, LANS, AdamW, momentum SGD, and NAG.

All steppers are pure: they return fresh parameter and state containers and
never mutate their inputs. The step counter ``t`` is 1-indexed, so the first
call on a zeroed state computes bias corrections with ``t = 1``.

The two block-wise rules follow the same skeleton. LAMB forms an Adam-style
direction per block and rescales it to trust length ``phi(|x_b|)``:

    m' = beta1 m + (1 - beta1) g
    v' = beta2 v + (1 - beta2) g^2
    r  = (m' / (1 - beta1^t)) / (sqrt(v' / (1 - beta2^t)) + epsilon)
    x' = x - eta * phi(|x_b|) / |r + lambda x| * (r + lambda x)

LANS normalizes the gradient per block *before* the moment updates and takes
a convex combination of a momentum branch and a pure-gradient branch, each
independently trust-scaled:

    gt = g_b / |g_b|
    r  = (m' / (1 - beta1^t)) / denom,   c = gt / denom
    d  = beta1 * phi(|x|)/|r + lambda x| * (r + lambda x)
       + (1 - beta1) * phi(|x|)/|c + lambda x| * (c + lambda x)
    x' = x - eta * d

where ``denom = sqrt(v' / (1 - beta2^t)) + epsilon`` is shared by both
branches and the gradient branch takes no beta1 bias correction. Because
``gt`` is unit length, ``d`` never exceeds trust length ``phi(|x_b|)`` and
the update is invariant to positive rescaling of the incoming gradient.

Trust scales degrade to 1.0 when either norm in the ratio is exactly zero,
so the first step from a zero initialization is still well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .blocks import BlockedVector, BlockLayout, l2_norm

ZERO_PASSTHROUGH = "zero_passthrough"
EPSILON_FLOOR = "epsilon_floor"
_POLICIES = (ZERO_PASSTHROUGH, EPSILON_FLOOR)

OPTIMIZER_NAMES = ("lamb", "lans", "adamw", "sgd_momentum", "nag")


class NonFiniteGradientError(ValueError):
    """A step was fed a gradient containing NaN or Inf."""


@dataclass(frozen=True)
class Phi:
    """Trust function applied to the parameter-block norm.

    ``identity`` passes the norm through; ``clamp`` pins it to ``[lo, hi]``,
    which keeps early steps from collapsing when blocks start near zero.
    """

    kind: str = "identity"
    lo: float = 0.0
    hi: float = float("inf")

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "clamp"):
            raise ValueError(f"unknown phi kind {self.kind!r}")
        if self.kind == "clamp" and not (0.0 <= self.lo <= self.hi):
            raise ValueError(f"clamp needs 0 <= lo <= hi, got [{self.lo}, {self.hi}]")

    def __call__(self, norm: float) -> float:
        if self.kind == "identity":
            return norm
        return min(max(norm, self.lo), self.hi)

    @classmethod
    def identity(cls) -> "Phi":
        return cls("identity")

    @classmethod
    def clamp(cls, lo: float, hi: float) -> "Phi":
        return cls("clamp", lo, hi)


@dataclass(frozen=True)
class OptimizerConfig:
    """Hyperparameters shared across the optimizer family.

    ``weight_decay`` is either a scalar applied to every block or a
    per-block sequence matching the layout. For ``sgd_momentum`` and
    ``nag`` only ``beta1`` is read (as the momentum coefficient mu).
    """

    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-6
    weight_decay: float | tuple[float, ...] = 0.0
    phi: Phi = field(default_factory=Phi.identity)
    normalize_grads: bool = False
    zero_grad_policy: str = ZERO_PASSTHROUGH
    normalize_eps: float = 1e-16

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError(f"beta1 must lie in [0, 1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must lie in [0, 1), got {self.beta2}")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.zero_grad_policy not in _POLICIES:
            raise ValueError(f"unknown zero-gradient policy {self.zero_grad_policy!r}")
        if self.normalize_eps <= 0.0:
            raise ValueError("normalize_eps must be > 0")
        wd = self.weight_decay
        if not np.isscalar(wd):
            wd = tuple(float(w) for w in wd)
            object.__setattr__(self, "weight_decay", wd)
        decays = wd if isinstance(wd, tuple) else (float(wd),)
        if any(w < 0.0 for w in decays):
            raise ValueError("weight decay must be >= 0")

    def decay_per_block(self, num_blocks: int) -> tuple[float, ...]:
        if isinstance(self.weight_decay, tuple):
            if len(self.weight_decay) != num_blocks:
                raise ValueError(
                    f"per-block weight decay has {len(self.weight_decay)} entries "
                    f"for {num_blocks} blocks"
                )
            return self.weight_decay
        return (float(self.weight_decay),) * num_blocks


@dataclass
class OptimizerState:
    """First/second moment buffers plus the 1-indexed step counter.

    ``sgd_momentum`` and ``nag`` use ``m`` as their momentum buffer and
    leave ``v`` untouched.
    """

    m: BlockedVector
    v: BlockedVector
    t: int = 0

    @classmethod
    def zeros(cls, layout: BlockLayout) -> "OptimizerState":
        return cls(BlockedVector.zeros(layout), BlockedVector.zeros(layout), 0)


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics: ``x' = x - eta * d`` with ``|d_b|`` per block.

    ``trust_ratios[b]`` is the applied trust scale ``phi(|x_b|) / |u_b|``
    (for LANS, the momentum-branch scale; 1.0 for rules without trust
    scaling or in the degenerate zero-norm case).
    """

    learning_rate: float
    update_norms: tuple[float, ...]
    trust_ratios: tuple[float, ...]


def normalize_gradient_block(
    g_b: np.ndarray,
    policy: str = ZERO_PASSTHROUGH,
    floor: float = 1e-16,
) -> np.ndarray:
    """Scale a gradient block to unit l2 norm.

    ``zero_passthrough`` maps an exactly-zero block to zeros (the unit-norm
    postcondition applies only to nonzero input); ``epsilon_floor`` divides
    by ``|g_b| + floor`` so the output is defined but slightly short of
    unit length. Raises NonFiniteGradientError on NaN/Inf input.
    """
    g_b = np.asarray(g_b, dtype=np.float64)
    if not np.all(np.isfinite(g_b)):
        raise NonFiniteGradientError("gradient block contains NaN or Inf")
    if policy not in _POLICIES:
        raise ValueError(f"unknown zero-gradient policy {policy!r}")
    nrm = l2_norm(g_b)
    if policy == ZERO_PASSTHROUGH:
        if nrm == 0.0:
            return np.zeros_like(g_b)
        return g_b / nrm
    return g_b / (nrm + floor)


def bias_correct(
    m_b: np.ndarray, v_b: np.ndarray, t: int, beta1: float, beta2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Debias raw moments at 1-indexed step ``t``."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    return m_b / (1.0 - beta1**t), v_b / (1.0 - beta2**t)


def trust_scale(x_b: np.ndarray, u_b: np.ndarray, phi: Phi) -> float:
    """``phi(|x_b|) / |u_b|``, degrading to 1.0 when either norm is zero."""
    xn = l2_norm(x_b)
    un = l2_norm(u_b)
    if xn == 0.0 or un == 0.0:
        return 1.0
    return phi(xn) / un


def _check_step_inputs(
    params: BlockedVector, grad: BlockedVector, eta_t: float
) -> None:
    if grad.layout != params.layout:
        raise ValueError("gradient layout does not match parameter layout")
    if not np.all(np.isfinite(grad.data)):
        raise NonFiniteGradientError("gradient contains NaN or Inf")
    if eta_t < 0.0:
        raise ValueError(f"learning rate must be >= 0, got {eta_t}")


def lamb_step(
    params: BlockedVector,
    state: OptimizerState,
    grad: BlockedVector,
    eta_t: float,
    config: OptimizerConfig,
) -> tuple[BlockedVector, OptimizerState, StepReport]:
    """One LAMB step over every block; see the module docstring for the rule."""
    _check_step_inputs(params, grad, eta_t)
    layout = params.layout
    decay = config.decay_per_block(layout.num_blocks)
    t = state.t + 1

    new_x = params.data.copy()
    new_m = state.m.data.copy()
    new_v = state.v.data.copy()
    update_norms: list[float] = []
    ratios: list[float] = []

    for b, sl in enumerate(layout.iter_slices()):
        x_b = params.data[sl]
        g_b = grad.data[sl]
        if config.normalize_grads:
            g_b = normalize_gradient_block(
                g_b, config.zero_grad_policy, config.normalize_eps
            )
        m_b = config.beta1 * state.m.data[sl] + (1.0 - config.beta1) * g_b
        v_b = config.beta2 * state.v.data[sl] + (1.0 - config.beta2) * g_b * g_b
        m_hat, v_hat = bias_correct(m_b, v_b, t, config.beta1, config.beta2)
        r_b = m_hat / (np.sqrt(v_hat) + config.epsilon)
        u_b = r_b + decay[b] * x_b
        scale = trust_scale(x_b, u_b, config.phi)
        d_b = scale * u_b
        new_x[sl] = x_b - eta_t * d_b
        new_m[sl] = m_b
        new_v[sl] = v_b
        update_norms.append(l2_norm(d_b))
        ratios.append(scale)

    new_state = OptimizerState(
        BlockedVector(new_m, layout), BlockedVector(new_v, layout), t
    )
    report = StepReport(float(eta_t), tuple(update_norms), tuple(ratios))
    return BlockedVector(new_x, layout), new_state, report


def lans_step(
    params: BlockedVector,
    state: OptimizerState,
    grad: BlockedVector,
    eta_t: float,
    config: OptimizerConfig,
) -> tuple[BlockedVector, OptimizerState, StepReport]:
    """One LANS step over every block; see the module docstring for the rule."""
    _check_step_inputs(params, grad, eta_t)
    layout = params.layout
    decay = config.decay_per_block(layout.num_blocks)
    t = state.t + 1

    new_x = params.data.copy()
    new_m = state.m.data.copy()
    new_v = state.v.data.copy()
    update_norms: list[float] = []
    ratios: list[float] = []

    for b, sl in enumerate(layout.iter_slices()):
        x_b = params.data[sl]
        g_t = normalize_gradient_block(
            grad.data[sl], config.zero_grad_policy, config.normalize_eps
        )
        m_b = config.beta1 * state.m.data[sl] + (1.0 - config.beta1) * g_t
        v_b = config.beta2 * state.v.data[sl] + (1.0 - config.beta2) * g_t * g_t
        m_hat, v_hat = bias_correct(m_b, v_b, t, config.beta1, config.beta2)
        denom = np.sqrt(v_hat) + config.epsilon
        r_b = m_hat / denom
        c_b = g_t / denom
        u_r = r_b + decay[b] * x_b
        u_c = c_b + decay[b] * x_b
        s_r = trust_scale(x_b, u_r, config.phi)
        s_c = trust_scale(x_b, u_c, config.phi)
        d_b = config.beta1 * (s_r * u_r) + (1.0 - config.beta1) * (s_c * u_c)
        new_x[sl] = x_b - eta_t * d_b
        new_m[sl] = m_b
        new_v[sl] = v_b
        update_norms.append(l2_norm(d_b))
        ratios.append(s_r)

    new_state = OptimizerState(
        BlockedVector(new_m, layout), BlockedVector(new_v, layout), t
    )
    report = StepReport(float(eta_t), tuple(update_norms), tuple(ratios))
    return BlockedVector(new_x, layout), new_state, report


def _adamw_core(
    params: BlockedVector,
    state: OptimizerState,
    grad: BlockedVector,
    eta_t: float,
    config: OptimizerConfig,
) -> tuple[BlockedVector, OptimizerState, StepReport]:
    _check_step_inputs(params, grad, eta_t)
    layout = params.layout
    decay = config.decay_per_block(layout.num_blocks)
    t = state.t + 1

    new_x = params.data.copy()
    new_m = state.m.data.copy()
    new_v = state.v.data.copy()
    update_norms: list[float] = []

    for b, sl in enumerate(layout.iter_slices()):
        x_b = params.data[sl]
        g_b = grad.data[sl]
        if config.normalize_grads:
            g_b = normalize_gradient_block(
                g_b, config.zero_grad_policy, config.normalize_eps
            )
        m_b = config.beta1 * state.m.data[sl] + (1.0 - config.beta1) * g_b
        v_b = config.beta2 * state.v.data[sl] + (1.0 - config.beta2) * g_b * g_b
        m_hat, v_hat = bias_correct(m_b, v_b, t, config.beta1, config.beta2)
        d_b = m_hat / (np.sqrt(v_hat) + config.epsilon) + decay[b] * x_b
        new_x[sl] = x_b - eta_t * d_b
        new_m[sl] = m_b
        new_v[sl] = v_b
        update_norms.append(l2_norm(d_b))

    new_state = OptimizerState(
        BlockedVector(new_m, layout), BlockedVector(new_v, layout), t
    )
    ones = (1.0,) * layout.num_blocks
    report = StepReport(float(eta_t), tuple(update_norms), ones)
    return BlockedVector(new_x, layout), new_state, report


def adamw_step(
    params: BlockedVector,
    state: OptimizerState,
    grad: BlockedVector,
    eta_t: float,
    config: OptimizerConfig,
) -> tuple[BlockedVector, OptimizerState]:
    """One AdamW step: Adam direction plus decoupled decay, no trust scaling."""
    new_params, new_state, _ = _adamw_core(params, state, grad, eta_t, config)
    return new_params, new_state


def _heavy_ball_core(
    params: BlockedVector,
    momentum: BlockedVector,
    grad: BlockedVector,
    eta_t: float,
    mu: float,
    nesterov: bool,
) -> tuple[BlockedVector, BlockedVector, StepReport]:
    _check_step_inputs(params, grad, eta_t)
    if momentum.layout != params.layout:
        raise ValueError("momentum layout does not match parameter layout")
    layout = params.layout
    new_m = mu * momentum.data + grad.data
    d = mu * new_m + grad.data if nesterov else new_m
    new_x = params.data - eta_t * d
    update_norms = tuple(l2_norm(d[sl]) for sl in layout.iter_slices())
    ones = (1.0,) * layout.num_blocks
    report = StepReport(float(eta_t), update_norms, ones)
    return BlockedVector(new_x, layout), BlockedVector(new_m, layout), report


def sgd_momentum_step(
    params: BlockedVector,
    momentum: BlockedVector,
    grad: BlockedVector,
    eta_t: float,
    mu: float,
) -> tuple[BlockedVector, BlockedVector]:
    """Classic momentum: ``m' = mu m + g``, ``x' = x - eta m'``."""
    new_params, new_momentum, _ = _heavy_ball_core(
        params, momentum, grad, eta_t, mu, nesterov=False
    )
    return new_params, new_momentum


def nag_step(
    params: BlockedVector,
    momentum: BlockedVector,
    grad: BlockedVector,
    eta_t: float,
    mu: float,
) -> tuple[BlockedVector, BlockedVector]:
    """Nesterov momentum: ``m' = mu m + g``, ``x' = x - eta (mu m' + g)``."""
    new_params, new_momentum, _ = _heavy_ball_core(
        params, momentum, grad, eta_t, mu, nesterov=True
    )
    return new_params, new_momentum


Stepper = Callable[
    [BlockedVector, OptimizerState, BlockedVector, float],
    tuple[BlockedVector, OptimizerState, StepReport],
]


def make_stepper(name: str, config: OptimizerConfig) -> Stepper:
    """Uniform (params, state, grad, eta) -> (params, state, report) interface.

    The heavy-ball rules read ``config.beta1`` as mu, keep their momentum in
    ``state.m``, and leave ``state.v`` at zero.
    """
    if name == "lamb":
        return lambda p, s, g, eta: lamb_step(p, s, g, eta, config)
    if name == "lans":
        return lambda p, s, g, eta: lans_step(p, s, g, eta, config)
    if name == "adamw":
        return lambda p, s, g, eta: _adamw_core(p, s, g, eta, config)

    if name in ("sgd_momentum", "nag"):
        nesterov = name == "nag"

        def step(
            p: BlockedVector, s: OptimizerState, g: BlockedVector, eta: float
        ) -> tuple[BlockedVector, OptimizerState, StepReport]:
            new_p, new_m, report = _heavy_ball_core(
                p, s.m, g, eta, config.beta1, nesterov
            )
            return new_p, OptimizerState(new_m, s.v, s.t + 1), report

        return step
    raise ValueError(f"unknown optimizer {name!r}; expected one of {OPTIMIZER_NAMES}")
