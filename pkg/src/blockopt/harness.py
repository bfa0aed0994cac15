"""Experiment harness: config files, training loop, oracle and scaling studies.

A run is described by a JSON config with four parts: a problem, an
optimizer, a rate schedule (either a single schedule or a list of stages,
each with its own peak and phase percentages), and sampling settings
(workers, per-worker batch, seeds). ``run_experiment`` executes it and
writes three artifacts into the output directory:

* ``metrics.csv``   one row per step, header
  ``step,lr,loss,grad_norm,block_update_norms,block_trust_ratios``
  (the two block columns are ';'-joined per-block values);
* ``config.json``   the fully resolved configuration that actually ran;
* ``summary.json``  final loss, gap to the reference optimum when one
  exists, and divergence information.

Divergence (NaN/Inf in the loss, gradient, or parameters) halts the run on
the step where it appears and is recorded in the summary; it never
propagates into later steps or crashes the harness.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .blocks import BlockedVector, l2_norm
from . import oracle
from .optimizers import (
    OPTIMIZER_NAMES,
    NonFiniteGradientError,
    OptimizerConfig,
    OptimizerState,
    Phi,
    make_stepper,
)
from .problems import Problem, eval_objective, initial_point, make_problem, reference_optimum
from .schedule import Schedule, StageSpec, sqrt_scale_lr, stage_to_schedule
from .sharding import aggregate_gradients, make_sampler, make_shards, next_minibatch

METRICS_HEADER = "step,lr,loss,grad_norm,block_update_norms,block_trust_ratios"


@dataclass(frozen=True)
class ProblemSpec:
    kind: str
    d: int
    n: int = 0
    seed: int = 0
    l2_reg: float = 0.0
    blocks: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ScheduleSpec:
    """Single-schedule description; phase lengths as percentages or steps."""

    kind: str = "warmup_const_decay"
    eta: float = 0.01
    warmup_pct: float | None = None
    const_pct: float | None = None
    warmup_steps: int | None = None
    const_steps: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("warmup_decay", "warmup_const_decay"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.warmup_pct is not None and self.warmup_steps is not None:
            raise ValueError("give warmup as a percentage or a step count, not both")
        if self.const_pct is not None and self.const_steps is not None:
            raise ValueError("give const as a percentage or a step count, not both")
        if self.kind == "warmup_decay" and (self.const_pct or self.const_steps):
            raise ValueError("warmup_decay has no constant phase")


@dataclass(frozen=True)
class StageConfig:
    """One stage of a multi-stage run: its own peak, phases, and length."""

    eta: float
    warmup_pct: float
    const_pct: float
    steps: int


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec
    optimizer_name: str
    optimizer: OptimizerConfig
    schedule: ScheduleSpec | None = None
    stages: tuple[StageConfig, ...] = ()
    total_steps: int = 0
    workers: int = 1
    local_batch: int | None = None
    shard_seed: int = 0
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.optimizer_name not in OPTIMIZER_NAMES:
            raise ValueError(
                f"unknown optimizer {self.optimizer_name!r}; expected one of {OPTIMIZER_NAMES}"
            )
        if (self.schedule is None) == (not self.stages):
            raise ValueError("config needs exactly one of 'schedule' or 'stages'")
        if self.schedule is not None and self.total_steps < 1:
            raise ValueError("total_steps must be >= 1 with a single schedule")
        if self.stages:
            stage_total = sum(s.steps for s in self.stages)
            if self.total_steps not in (0, stage_total):
                raise ValueError(
                    f"total_steps {self.total_steps} disagrees with stage sum {stage_total}"
                )
            object.__setattr__(self, "total_steps", stage_total)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def global_batch(self) -> int | None:
        return None if self.local_batch is None else self.workers * self.local_batch


@dataclass
class MetricsRow:
    step: int
    lr: float
    loss: float
    grad_norm: float
    block_update_norms: tuple[float, ...]
    block_trust_ratios: tuple[float, ...]

    def as_csv(self) -> str:
        upd = ";".join(repr(v) for v in self.block_update_norms)
        tr = ";".join(repr(v) for v in self.block_trust_ratios)
        return f"{self.step},{self.lr!r},{self.loss!r},{self.grad_norm!r},{upd},{tr}"


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    summary: dict
    params: BlockedVector

    @property
    def diverged(self) -> bool:
        return bool(self.summary["diverged"])


# ---------------------------------------------------------------------------
# config parsing

def _require_keys(raw: dict, allowed: Sequence[str], where: str) -> None:
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)} in {where}")


def _problem_from_dict(raw: dict) -> ProblemSpec:
    _require_keys(raw, ("kind", "d", "n", "seed", "l2_reg", "blocks"), "problem")
    blocks = raw.get("blocks")
    return ProblemSpec(
        kind=raw["kind"],
        d=int(raw["d"]),
        n=int(raw.get("n", 0)),
        seed=int(raw.get("seed", 0)),
        l2_reg=float(raw.get("l2_reg", 0.0)),
        blocks=None if blocks is None else tuple(int(b) for b in blocks),
    )


def _phi_from_dict(raw) -> Phi:
    if raw is None:
        return Phi.identity()
    _require_keys(raw, ("kind", "lo", "hi"), "optimizer.phi")
    if raw.get("kind", "identity") == "identity":
        return Phi.identity()
    return Phi.clamp(float(raw["lo"]), float(raw["hi"]))


def _optimizer_from_dict(raw: dict) -> tuple[str, OptimizerConfig]:
    _require_keys(
        raw,
        ("name", "beta1", "beta2", "epsilon", "weight_decay", "phi",
         "normalize_grads", "zero_grad_policy", "normalize_eps"),
        "optimizer",
    )
    wd = raw.get("weight_decay", 0.0)
    config = OptimizerConfig(
        beta1=float(raw.get("beta1", 0.9)),
        beta2=float(raw.get("beta2", 0.999)),
        epsilon=float(raw.get("epsilon", 1e-6)),
        weight_decay=tuple(float(w) for w in wd) if isinstance(wd, (list, tuple)) else float(wd),
        phi=_phi_from_dict(raw.get("phi")),
        normalize_grads=bool(raw.get("normalize_grads", False)),
        zero_grad_policy=raw.get("zero_grad_policy", "zero_passthrough"),
        normalize_eps=float(raw.get("normalize_eps", 1e-16)),
    )
    return raw["name"], config


def _schedule_from_dict(raw: dict) -> ScheduleSpec:
    _require_keys(
        raw,
        ("kind", "eta", "warmup_pct", "const_pct", "warmup_steps", "const_steps"),
        "schedule",
    )
    return ScheduleSpec(
        kind=raw.get("kind", "warmup_const_decay"),
        eta=float(raw["eta"]),
        warmup_pct=None if raw.get("warmup_pct") is None else float(raw["warmup_pct"]),
        const_pct=None if raw.get("const_pct") is None else float(raw["const_pct"]),
        warmup_steps=None if raw.get("warmup_steps") is None else int(raw["warmup_steps"]),
        const_steps=None if raw.get("const_steps") is None else int(raw["const_steps"]),
    )


def config_from_dict(raw: dict) -> ExperimentConfig:
    _require_keys(
        raw,
        ("problem", "optimizer", "schedule", "stages", "total_steps",
         "workers", "local_batch", "shard_seed", "seed", "out_dir"),
        "config",
    )
    name, opt = _optimizer_from_dict(raw["optimizer"])
    stages = tuple(
        StageConfig(
            eta=float(s["eta"]),
            warmup_pct=float(s["warmup_pct"]),
            const_pct=float(s.get("const_pct", 0.0)),
            steps=int(s["steps"]),
        )
        for s in raw.get("stages", ())
    )
    return ExperimentConfig(
        problem=_problem_from_dict(raw["problem"]),
        optimizer_name=name,
        optimizer=opt,
        schedule=_schedule_from_dict(raw["schedule"]) if raw.get("schedule") else None,
        stages=stages,
        total_steps=int(raw.get("total_steps", 0)),
        workers=int(raw.get("workers", 1)),
        local_batch=None if raw.get("local_batch") is None else int(raw["local_batch"]),
        shard_seed=int(raw.get("shard_seed", 0)),
        seed=int(raw.get("seed", 0)),
        out_dir=raw.get("out_dir"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def config_to_dict(config: ExperimentConfig) -> dict:
    """Fully resolved echo of the configuration, defaults included."""
    phi = config.optimizer.phi
    out = {
        "problem": dataclasses.asdict(config.problem),
        "optimizer": {
            "name": config.optimizer_name,
            "beta1": config.optimizer.beta1,
            "beta2": config.optimizer.beta2,
            "epsilon": config.optimizer.epsilon,
            "weight_decay": config.optimizer.weight_decay,
            "phi": {"kind": phi.kind, "lo": phi.lo, "hi": phi.hi}
            if phi.kind == "clamp"
            else {"kind": "identity"},
            "normalize_grads": config.optimizer.normalize_grads,
            "zero_grad_policy": config.optimizer.zero_grad_policy,
            "normalize_eps": config.optimizer.normalize_eps,
        },
        "schedule": None if config.schedule is None else dataclasses.asdict(config.schedule),
        "stages": [dataclasses.asdict(s) for s in config.stages],
        "total_steps": config.total_steps,
        "workers": config.workers,
        "local_batch": config.local_batch,
        "shard_seed": config.shard_seed,
        "seed": config.seed,
        "out_dir": config.out_dir,
    }
    if config.problem.blocks is not None:
        out["problem"]["blocks"] = list(config.problem.blocks)
    return out


# ---------------------------------------------------------------------------
# schedule and problem resolution

def resolve_schedule(spec: ScheduleSpec, total_steps: int) -> Schedule:
    if spec.warmup_steps is not None:
        warmup = spec.warmup_steps
    elif spec.warmup_pct is not None:
        return stage_to_schedule(
            StageSpec(spec.eta, spec.warmup_pct, spec.const_pct or 0.0), total_steps
        )
    else:
        raise ValueError("schedule needs warmup_pct or warmup_steps")
    const = spec.const_steps or 0
    if warmup + const >= total_steps:
        raise ValueError("warmup + const leaves no decay phase")
    return Schedule(spec.eta, total_steps, warmup, const)


def schedule_plan(config: ExperimentConfig) -> list[Schedule]:
    """One Schedule per stage; rates inside a stage use stage-local steps."""
    if config.schedule is not None:
        return [resolve_schedule(config.schedule, config.total_steps)]
    return [
        stage_to_schedule(StageSpec(s.eta, s.warmup_pct, s.const_pct), s.steps)
        for s in config.stages
    ]


def build_problem(spec: ProblemSpec) -> Problem:
    return make_problem(
        kind=spec.kind,
        d=spec.d,
        n=spec.n,
        seed=spec.seed,
        l2_reg=spec.l2_reg,
        block_sizes=spec.blocks,
    )


# ---------------------------------------------------------------------------
# the training loop

def _finite(arr: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(arr)))


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path | None = None
) -> RunResult:
    """Execute one configured run; write artifacts when a directory is given.

    The explicit ``out_dir`` wins over ``config.out_dir``; with neither,
    nothing is written and the result is only returned.
    """
    started = time.perf_counter()
    problem = build_problem(config.problem)
    plan = schedule_plan(config)

    if problem.is_stochastic:
        if config.local_batch is None:
            raise ValueError(f"{problem.kind} needs local_batch")
        shards = make_shards(problem.num_samples, config.workers, config.shard_seed)
        if config.local_batch > min(shards.shard_sizes()):
            raise ValueError("local_batch exceeds the smallest shard")
        samplers = [make_sampler(shards, w) for w in range(config.workers)]
    else:
        if config.workers != 1 or config.local_batch is not None:
            raise ValueError(f"{problem.kind} is deterministic: workers=1, no local_batch")
        samplers = []

    params = initial_point(problem, config.seed)
    state = OptimizerState.zeros(problem.layout)
    stepper = make_stepper(config.optimizer_name, config.optimizer)

    rows: list[MetricsRow] = []
    diverged_at: int | None = None
    global_step = 0

    for sched in plan:
        for t in range(1, sched.total_steps + 1):
            global_step += 1
            lr = sched.rate(t)

            # non-finite values are detected and recorded below, so numpy's
            # overflow warnings would only be noise here
            with np.errstate(over="ignore", invalid="ignore"):
                if problem.is_stochastic:
                    evals = [
                        eval_objective(problem, params, next_minibatch(s, config.local_batch))
                        for s in samplers
                    ]
                    grad = aggregate_gradients([e.grad for e in evals])
                    loss = sum(e.loss for e in evals) / len(evals)
                else:
                    res = eval_objective(problem, params)
                    grad, loss = res.grad, res.loss

            if not np.isfinite(loss) or not _finite(grad.data):
                rows.append(
                    MetricsRow(global_step, lr, float(loss), float("nan"), (), ())
                )
                diverged_at = global_step
                break

            try:
                new_params, state, report = stepper(params, state, grad, lr)
            except NonFiniteGradientError:
                diverged_at = global_step
                break

            rows.append(
                MetricsRow(
                    step=global_step,
                    lr=lr,
                    loss=float(loss),
                    grad_norm=l2_norm(grad.data),
                    block_update_norms=report.update_norms,
                    block_trust_ratios=report.trust_ratios,
                )
            )

            if not _finite(new_params.data):
                diverged_at = global_step
                break
            params = new_params
        if diverged_at is not None:
            break

    with np.errstate(over="ignore", invalid="ignore"):
        final_loss = eval_objective(problem, params).loss
    f_star: float | None
    try:
        _, f_star = reference_optimum(problem)
    except (ValueError, RuntimeError):
        f_star = None

    summary = {
        "optimizer": config.optimizer_name,
        "problem_kind": problem.kind,
        "total_steps": config.total_steps,
        "steps_run": global_step if diverged_at is None else diverged_at,
        "workers": config.workers,
        "global_batch": config.global_batch,
        "final_loss": final_loss,
        "f_star": f_star,
        "f_star_gap": None if f_star is None else final_loss - f_star,
        "diverged": diverged_at is not None,
        "diverged_at": diverged_at,
        "wall_clock_s": time.perf_counter() - started,
    }

    target = out_dir if out_dir is not None else config.out_dir
    if target is not None:
        write_artifacts(Path(target), config, rows, summary)
    return RunResult(config=config, rows=rows, summary=summary, params=params)


def write_artifacts(
    out_dir: Path, config: ExperimentConfig, rows: list[MetricsRow], summary: dict
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(row.as_csv() + "\n")
    with open(out_dir / "config.json", "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2)
        fh.write("\n")
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# oracle comparison

def _oracle_phi(phi: Phi) -> Callable:
    if phi.kind == "identity":
        return oracle.identity_scale
    return oracle.make_clamp(phi.lo, phi.hi)


def oracle_compare(config: ExperimentConfig, steps: int) -> float:
    """Worst relative deviation between production and reference trajectories.

    Replays the config's optimizer for ``steps`` steps on a seeded synthetic
    gradient stream (iid standard normal per step) under the config's
    schedule shape, once in production float64 and once through the
    extended-precision transcription, and reports the largest normwise
    relative gap across all steps.
    """
    problem = build_problem(config.problem)
    layout = problem.layout
    block_sizes = list(layout.sizes)
    opt = config.optimizer

    sched = _rescaled_schedule(config, steps)
    etas = [sched.rate(t) for t in range(1, steps + 1)]
    rng = np.random.default_rng([config.seed, 7])
    x0 = rng.uniform(-1.0, 1.0, layout.total_dim)
    grads = [rng.standard_normal(layout.total_dim) for _ in range(steps)]

    stepper = make_stepper(config.optimizer_name, opt)
    params = BlockedVector(x0.copy(), layout)
    state = OptimizerState.zeros(layout)
    produced = []
    for g, eta in zip(grads, etas):
        params, state, _ = stepper(params, state, BlockedVector(g.copy(), layout), eta)
        produced.append(params.data.copy())

    common = dict(beta1=opt.beta1, beta2=opt.beta2, epsilon=opt.epsilon,
                  weight_decay=opt.weight_decay, zero_grad_policy=opt.zero_grad_policy,
                  normalize_eps=opt.normalize_eps)
    name = config.optimizer_name
    if name == "lamb":
        reference = oracle.lamb_trajectory(
            x0, block_sizes, grads, etas, phi=_oracle_phi(opt.phi),
            normalize_grads=opt.normalize_grads, **common,
        )
    elif name == "lans":
        reference = oracle.lans_trajectory(
            x0, block_sizes, grads, etas, phi=_oracle_phi(opt.phi), **common,
        )
    elif name == "adamw":
        reference = oracle.adamw_trajectory(
            x0, block_sizes, grads, etas, normalize_grads=opt.normalize_grads, **common,
        )
    elif name == "sgd_momentum":
        reference = oracle.sgd_momentum_trajectory(x0, grads, etas, mu=opt.beta1)
    else:
        reference = oracle.nag_trajectory(x0, grads, etas, mu=opt.beta1)
    return oracle.max_relative_deviation(produced, reference)


def _rescaled_schedule(config: ExperimentConfig, steps: int) -> Schedule:
    """The config's schedule shape stretched or squeezed to ``steps`` steps."""
    base = schedule_plan(config)[0]
    warmup = max(1, round(base.warmup_steps / base.total_steps * steps))
    const = round(base.const_steps / base.total_steps * steps)
    if warmup + const >= steps:
        const = max(0, steps - warmup - 1)
    return Schedule(base.eta, steps, warmup, const)


def default_oracle_grid(steps: int = 1000, seed: int = 0) -> dict[str, float]:
    """Deviation for each optimizer on the standard 16-dim, 3-block stream."""
    problem = ProblemSpec(kind="quadratic", d=16, seed=5, blocks=(6, 5, 5))
    sched = ScheduleSpec(kind="warmup_const_decay", eta=0.01, warmup_pct=10.0, const_pct=20.0)
    results = {}
    for name in OPTIMIZER_NAMES:
        opt = OptimizerConfig(weight_decay=0.01 if name in ("lamb", "lans", "adamw") else 0.0)
        config = ExperimentConfig(
            problem=problem, optimizer_name=name, optimizer=opt,
            schedule=sched, total_steps=steps, seed=seed,
        )
        results[name] = oracle_compare(config, steps)
    return results


# ---------------------------------------------------------------------------
# batch scaling

def batch_scaling_study(
    config: ExperimentConfig, batches: Sequence[int]
) -> list[dict]:
    """Sweep global batch sizes under the square-root rate rule.

    For every requested global batch, runs LAMB and LANS under both
    schedule kinds with the peak rate scaled by sqrt(batch / base batch),
    where the base batch and base rate come from ``config``. Returns one
    record per (batch, optimizer, schedule kind) with the final loss and a
    divergence flag; divergence is data here, not an error.
    """
    if config.schedule is None:
        raise ValueError("batch scaling needs a single-schedule config")
    if config.global_batch is None:
        raise ValueError("batch scaling needs a stochastic base config")
    base_batch = config.global_batch
    base_eta = config.schedule.eta

    records = []
    for k in batches:
        if k % config.workers != 0:
            raise ValueError(f"global batch {k} not divisible by {config.workers} workers")
        eta_k = sqrt_scale_lr(base_eta, base_batch, k)
        for name in ("lamb", "lans"):
            for kind in ("warmup_decay", "warmup_const_decay"):
                sched = dataclasses.replace(
                    config.schedule,
                    kind=kind,
                    eta=eta_k,
                    const_pct=(config.schedule.const_pct if kind == "warmup_const_decay" else None),
                    const_steps=(config.schedule.const_steps if kind == "warmup_const_decay" else None),
                )
                trial = dataclasses.replace(
                    config,
                    optimizer_name=name,
                    schedule=sched,
                    local_batch=k // config.workers,
                    out_dir=None,
                )
                result = run_experiment(trial, out_dir=None)
                records.append(
                    {
                        "global_batch": k,
                        "optimizer": name,
                        "schedule": kind,
                        "eta": eta_k,
                        "final_loss": result.summary["final_loss"],
                        "diverged": result.summary["diverged"],
                    }
                )
    return records


def write_batch_scaling_csv(records: list[dict], path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("global_batch,optimizer,schedule,eta,final_loss,diverged\n")
        for r in records:
            fh.write(
                f"{r['global_batch']},{r['optimizer']},{r['schedule']},"
                f"{r['eta']!r},{r['final_loss']!r},{str(r['diverged']).lower()}\n"
            )
