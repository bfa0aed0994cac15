"""Shard-based minibatch sampling and gradient-variance estimation.

A dataset of ``n`` samples is split once into ``workers`` near-equal shards
by a seeded global permutation; shard membership never changes afterwards.
Each worker then draws drop-last minibatches from its own shard, reshuffling
the shard at every epoch boundary. Batches never splice across epochs: when
fewer than ``local_k`` samples remain, the leftovers are dropped and a fresh
epoch starts.

Everything is driven by explicit seeds, so a (seed, worker) pair replays the
identical index sequence on every run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .blocks import BlockedVector
from .problems import Problem, per_sample_gradients

VARIANCE_SCHEMES = ("with_replacement", "without_replacement", "sharded")


@dataclass(frozen=True, eq=False)
class ShardPlan:
    """Disjoint, covering assignment of sample indices to workers.

    When ``workers`` does not divide ``n``, the lowest-indexed shards take
    one extra sample each, so sizes differ by at most one.
    """

    n: int
    workers: int
    seed: int
    shards: tuple[np.ndarray, ...]

    def shard_sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.shards)


def make_shards(n: int, workers: int, seed: int) -> ShardPlan:
    """Permute ``range(n)`` with the given seed and cut it into contiguous chunks."""
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    if not 1 <= workers <= n:
        raise ValueError(f"workers must lie in [1, {n}], got {workers}")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, workers)
    shards, start = [], 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        shards.append(perm[start : start + size].copy())
        start += size
    return ShardPlan(n=n, workers=workers, seed=seed, shards=tuple(shards))


@dataclass
class SamplerState:
    """Cursor over one worker's shard, reshuffled at each epoch boundary."""

    shard: np.ndarray
    seed: int
    worker: int
    epoch: int
    cursor: int
    order: np.ndarray

    @property
    def shard_size(self) -> int:
        return len(self.shard)


def _epoch_order(shard: np.ndarray, seed: int, worker: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng([seed, worker, epoch])
    return shard[rng.permutation(len(shard))]


def make_sampler(plan: ShardPlan, worker: int) -> SamplerState:
    if not 0 <= worker < plan.workers:
        raise IndexError(f"worker {worker} out of range for {plan.workers} workers")
    shard = plan.shards[worker]
    return SamplerState(
        shard=shard,
        seed=plan.seed,
        worker=worker,
        epoch=0,
        cursor=0,
        order=_epoch_order(shard, plan.seed, worker, 0),
    )


def next_minibatch(state: SamplerState, local_k: int) -> np.ndarray:
    """Draw the next ``local_k`` indices from the sampler, advancing it.

    Within an epoch, consecutive calls walk a without-replacement
    permutation of the shard; a tail shorter than ``local_k`` is dropped.
    ``local_k`` equal to the shard size yields whole-shard batches.
    """
    if not 1 <= local_k <= state.shard_size:
        raise ValueError(
            f"local batch {local_k} outside [1, shard size {state.shard_size}]"
        )
    if state.cursor + local_k > state.shard_size:
        state.epoch += 1
        state.order = _epoch_order(state.shard, state.seed, state.worker, state.epoch)
        state.cursor = 0
    batch = state.order[state.cursor : state.cursor + local_k].copy()
    state.cursor += local_k
    return batch


def aggregate_gradients(worker_grads: Sequence[BlockedVector]) -> BlockedVector:
    """Mean of per-worker gradients, accumulated in worker order.

    The summation order is pinned (worker 0 first) so the aggregate is
    bit-reproducible run to run.
    """
    if not worker_grads:
        raise ValueError("need at least one worker gradient")
    layout = worker_grads[0].layout
    total = worker_grads[0].data.copy()
    for g in worker_grads[1:]:
        if g.layout != layout:
            raise ValueError("worker gradients disagree on block layout")
        total += g.data
    return BlockedVector(total / len(worker_grads), layout)


@dataclass(frozen=True)
class VarianceReport:
    """Empirical total variance (trace of covariance) of the batch gradient."""

    scheme: str
    k: int
    variance: float
    trials: int
    stderr: float


def estimate_gradient_variance(
    problem: Problem,
    k: int,
    scheme: str,
    trials: int = 10_000,
    seed: int = 0,
    workers: int | None = None,
    at: np.ndarray | None = None,
) -> VarianceReport:
    """Monte-Carlo estimate of ``E |g_batch - E g_batch|^2`` at a fixed point.

    Schemes: ``with_replacement`` draws k iid sample indices;
    ``without_replacement`` draws a size-k subset; ``sharded`` mimics the
    production sampler, drawing k/workers indices without replacement inside
    each shard of a fresh shard plan. ``stderr`` is the standard error of the
    variance estimate, from the spread of per-trial squared deviations.

    Per-sample gradients are precomputed once at the evaluation point, so
    trials only index into a matrix.
    """
    if scheme not in VARIANCE_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {VARIANCE_SCHEMES}")
    if trials < 2:
        raise ValueError("need at least 2 trials")
    n = problem.num_samples
    if not 1 <= k <= n:
        raise ValueError(f"batch size {k} outside [1, {n}]")

    if at is None:
        at = np.random.default_rng([seed, 101]).uniform(-0.5, 0.5, problem.dim)
    grads = per_sample_gradients(problem, at)

    rng = np.random.default_rng([seed, 202])
    if scheme == "sharded":
        if workers is None or workers < 1:
            raise ValueError("sharded scheme needs a positive worker count")
        if k % workers != 0:
            raise ValueError(f"batch size {k} not divisible by {workers} workers")
        plan = make_shards(n, workers, seed)
        local_k = k // workers
        if any(local_k > size for size in plan.shard_sizes()):
            raise ValueError("local batch exceeds a shard size")

    batch_means = np.empty((trials, problem.dim))
    for j in range(trials):
        if scheme == "with_replacement":
            idx = rng.integers(0, n, size=k)
        elif scheme == "without_replacement":
            idx = rng.permutation(n)[:k]
        else:
            idx = np.concatenate(
                [shard[rng.permutation(len(shard))[:local_k]] for shard in plan.shards]
            )
        # sort so the mean depends only on the sample multiset, not the draw
        # order; this makes full-batch without-replacement draws identical
        # bit-for-bit (variance exactly zero at k = n)
        batch_means[j] = grads[np.sort(idx)].mean(axis=0)

    # shifted-data form: variance is shift-invariant, and subtracting a row
    # first means identical draws (k = n without replacement) give exact
    # zeros instead of centering round-off
    shifted = batch_means - batch_means[0]
    center = shifted.mean(axis=0)
    sq_dev = np.sum((shifted - center) ** 2, axis=1)
    variance = float(np.sum(sq_dev) / (trials - 1))
    stderr = float(np.std(sq_dev, ddof=1) / np.sqrt(trials))
    return VarianceReport(scheme=scheme, k=k, variance=variance, trials=trials, stderr=stderr)


def expected_variance(problem: Problem, k: int, scheme: str, at: np.ndarray) -> float:
    """Closed-form sampling variance for the two exchangeable schemes.

    ``with_replacement``: population variance / k. ``without_replacement``:
    the same with the finite-population correction (n - k) / (n - 1),
    which vanishes exactly at k = n. The sharded scheme has no closed form
    here and raises.
    """
    n = problem.num_samples
    grads = per_sample_gradients(problem, at)
    pop_var = float(np.sum(np.var(grads, axis=0, ddof=0)))
    if scheme == "with_replacement":
        return pop_var / k
    if scheme == "without_replacement":
        if n == 1:
            return 0.0
        return pop_var / k * (n - k) / (n - 1)
    raise ValueError(f"no closed form for scheme {scheme!r}")
