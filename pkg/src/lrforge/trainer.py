"""Deterministic iteration-based training loop.

A trial is a pure function of (model spec, task, policy, optimizer spec,
config): the epoch shuffles, parameter init, and LR sequence all derive
from config.seed, so the same inputs always produce the same trace.

Divergence (a non-finite loss or gradient) is a first-class outcome, not
an exception: the trial stops and the trace is marked diverged. Large
learning rates are expected to blow up during sweeps.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import adaptive, optim, schedule
from .model import ModelSpec, ParamVector, accuracy_on, forward_loss_grad, init_params
from .problems import Surface, TaskData, surface_value_grad


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    budget: int = 1000
    eval_every: Optional[int] = None  # None means once per epoch
    target_accuracy: Optional[float] = None
    seed: int = 0

    def validate(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if self.eval_every is not None and self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.target_accuracy is not None and not (0 < self.target_accuracy <= 1):
            raise ValueError(f"target_accuracy must be in (0, 1], "
                             f"got {self.target_accuracy}")


@dataclass
class TrialOutcome:
    final_accuracy: float
    best_accuracy: float
    iterations_run: int
    iterations_to_target: Optional[int]
    diverged: bool
    wall_time_sec: float

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"final_accuracy": self.final_accuracy,
             "best_accuracy": self.best_accuracy,
             "iterations_run": self.iterations_run,
             "iterations_to_target": self.iterations_to_target,
             "diverged": self.diverged}
        if include_timing:
            d["wall_time_sec"] = self.wall_time_sec
        return d


@dataclass
class TrialTrace:
    iterations: list[int] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    eval_iterations: list[int] = field(default_factory=list)
    eval_accuracies: list[float] = field(default_factory=list)
    outcome: Optional[TrialOutcome] = None
    final_params: Optional[ParamVector] = None


def epoch_length(n_train: int, batch_size: int) -> int:
    return math.ceil(n_train / batch_size)


def run_trial(model_spec: ModelSpec, task: TaskData, policy,
              opt_spec: optim.OptimizerSpec, config: TrainConfig,
              init: Optional[ParamVector] = None) -> TrialTrace:
    """Train for config.budget iterations, evaluating every eval_every.

    The test split is also evaluated once before any step (iteration 0)
    and at the end of the budget, so a budget of 0 still yields a usable
    outcome. When target_accuracy is set the trial stops at the first
    evaluation that reaches it. `init` warm-starts from a checkpoint
    instead of the seeded random init.
    """
    config.validate()
    plateau = isinstance(policy, (adaptive.ReduceOnPlateau, adaptive.ChangeOnPlateau))
    if plateau:
        adaptive.validate_plateau(policy)
        adaptive_state = adaptive.initial_state(policy)
    else:
        schedule.validate(policy)
        adaptive_state = None

    n = task.train.features.shape[0]
    ep_len = epoch_length(n, config.batch_size)
    eval_every = config.eval_every if config.eval_every is not None else ep_len

    rng = np.random.default_rng(config.seed)
    params = init if init is not None else init_params(model_spec, config.seed)
    opt_state = optim.init_state(opt_spec, params.data.size)

    trace = TrialTrace()
    started = time.perf_counter()

    def evaluate(t_done: int) -> float:
        acc = accuracy_on(model_spec, params, task.test)
        trace.eval_iterations.append(t_done)
        trace.eval_accuracies.append(acc)
        return acc

    def finish(t_done: int, diverged: bool, to_target: Optional[int]) -> TrialTrace:
        final = trace.eval_accuracies[-1]
        trace.outcome = TrialOutcome(
            final_accuracy=final,
            best_accuracy=max(trace.eval_accuracies),
            iterations_run=t_done,
            iterations_to_target=to_target,
            diverged=diverged,
            wall_time_sec=time.perf_counter() - started)
        trace.final_params = params
        return trace

    acc = evaluate(0)
    if config.target_accuracy is not None and acc >= config.target_accuracy:
        return finish(0, False, 0)

    perm = None
    for t in range(config.budget):
        if t % ep_len == 0:
            perm = rng.permutation(n)
        lo = (t % ep_len) * config.batch_size
        batch = perm[lo:lo + config.batch_size]
        xb = task.train.features[batch]
        yb = task.train.labels[batch]

        if plateau:
            lr = adaptive.current_lr(adaptive_state, policy, t)
        else:
            lr = schedule.lr_at(policy, t)

        loss, grad, _ = forward_loss_grad(model_spec, params, xb, yb)
        if not math.isfinite(loss) or not np.isfinite(grad.data).all():
            trace.iterations.append(t)
            trace.lrs.append(lr)
            trace.losses.append(loss)
            evaluate(t + 1)
            return finish(t + 1, True, None)

        new_data, opt_state = optim.step(params.data, grad.data, lr, opt_state)
        params = ParamVector(data=new_data, layout=params.layout)

        trace.iterations.append(t)
        trace.lrs.append(lr)
        trace.losses.append(loss)

        t_done = t + 1
        if t_done % eval_every == 0 or t_done == config.budget:
            acc = evaluate(t_done)
            if plateau:
                metric = loss if policy.monitor == "train_loss" else acc
                adaptive_state, _ = adaptive.observe(adaptive_state, policy,
                                                     metric, t=t_done)
            if config.target_accuracy is not None and acc >= config.target_accuracy:
                return finish(t_done, False, t_done)

    return finish(config.budget, False, None)


def write_train_csv(trace: TrialTrace, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "lr", "train_loss"])
        for t, lr, loss in zip(trace.iterations, trace.lrs, trace.losses):
            writer.writerow([t, repr(lr), repr(loss)])


def write_eval_csv(trace: TrialTrace, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "test_accuracy"])
        for t, acc in zip(trace.eval_iterations, trace.eval_accuracies):
            writer.writerow([t, repr(acc)])


# --- 2-D surface trials ---


@dataclass
class SurfacePath:
    iterations: list[int]
    points: list[np.ndarray]
    values: list[float]
    diverged: bool

    def final_value(self) -> float:
        return self.values[-1]


def run_surface_trial(surface: Surface, start, policy,
                      opt_spec: optim.OptimizerSpec, iterations: int) -> SurfacePath:
    """Trace an optimizer across a 2-D surface under the given LR policy.

    Returns iterations + 1 points (the start plus one per step), fewer if
    the trajectory diverges.
    """
    schedule.validate(policy)
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    point = np.asarray(start, dtype=float)
    if point.shape != (2,):
        raise ValueError(f"start must be a 2-D point, got shape {point.shape}")

    opt_state = optim.init_state(opt_spec, 2)
    value, grad = surface_value_grad(surface, point)
    path = SurfacePath(iterations=[0], points=[point.copy()], values=[value],
                       diverged=False)
    for t in range(iterations):
        if not math.isfinite(value) or not np.isfinite(grad).all():
            path.diverged = True
            return path
        lr = schedule.lr_at(policy, t)
        point, opt_state = optim.step(point, grad, lr, opt_state)
        with np.errstate(over="ignore", invalid="ignore"):
            value, grad = surface_value_grad(surface, point)
        path.iterations.append(t + 1)
        path.points.append(point.copy())
        path.values.append(value)
    if not math.isfinite(value):
        path.diverged = True
    return path


def write_surface_csv(path_result: SurfacePath, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "x", "y", "value"])
        for t, pt, v in zip(path_result.iterations, path_result.points,
                            path_result.values):
            writer.writerow([t, repr(float(pt[0])), repr(float(pt[1])), repr(v)])
