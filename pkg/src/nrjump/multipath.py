"""Multiple annealed bridges per switch, averaged in the log domain."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .annealed import DOWN, UP, AnnealingSchedule, BridgeSpace, InnerKernel, bridge_batch
from .core import MoveKind, NestedTarget, StepResult, TransDimState
from .kernels import (JumpSpec, ModelProposalPmf, ParamKernel, draw_neighbour, log_g_ratio,
                      log_uniform, make_g, param_move)


def log_mean_exp(log_values: np.ndarray) -> float:
    log_values = np.asarray(log_values, dtype=float)
    if np.all(log_values == -np.inf):
        return -math.inf
    return float(logsumexp(log_values) - math.log(len(log_values)))


@dataclass(frozen=True)
class MultiPathProposal:
    endpoints: list[np.ndarray]
    log_ratios: np.ndarray
    log_rbar: float
    jstar: int | None = None

    @property
    def N(self) -> int:
        return len(self.log_ratios)


def select_jstar(log_ratios: np.ndarray, rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to exp(log_ratios)."""
    lr = np.asarray(log_ratios, dtype=float)
    top = lr.max()
    if top == -np.inf:
        raise ValueError("all path ratios are zero")
    w = np.exp(lr - top)
    cdf = np.cumsum(w)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(w) - 1))


def multi_forward(space: BridgeSpace, direction: int, params: np.ndarray,
                  schedule: AnnealingSchedule, kernel: InnerKernel, N: int,
                  rng: np.random.Generator) -> MultiPathProposal:
    """N bridges from the same start, ratio averaged as log-sum-exp minus log N."""
    log_r, ends = bridge_batch(space, direction, params, schedule, kernel, N, rng)
    return MultiPathProposal(ends, log_r, log_mean_exp(log_r))


def reverse_branch(space: BridgeSpace, direction: int, params: np.ndarray,
                   schedule: AnnealingSchedule, kernel: InnerKernel, N: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One forward bridge, then N-1 bridges back from its endpoint.

    Returns the endpoint and log rbar(k', k), the average of the forward
    path's reciprocal ratio and the N-1 reverse ratios.
    """
    log_fwd, ends = bridge_batch(space, direction, params, schedule, kernel, 1, rng)
    endpoint = ends[0]
    log_r = np.empty(N)
    log_r[0] = -log_fwd[0]
    if N > 1 and log_fwd[0] > -np.inf:
        log_rev, _ = bridge_batch(space, -direction, endpoint, schedule, kernel, N - 1, rng)
        log_r[1:] = log_rev
    elif N > 1:
        log_r[1:] = np.inf
    return endpoint, (math.inf if log_fwd[0] == -np.inf else log_mean_exp(log_r))


def _attempt(state: TransDimState, k_to: int, target: NestedTarget, jump: JumpSpec,
             schedule: AnnealingSchedule, kernel: InnerKernel, N: int,
             rng: np.random.Generator, log_extra: float = 0.0) -> tuple[bool, np.ndarray | None]:
    log_ua = log_uniform(rng)
    forward_branch = rng.random() <= 0.5
    space = BridgeSpace(target, jump, min(state.k, k_to))
    direction = UP if k_to > state.k else DOWN
    if forward_branch:
        mp = multi_forward(space, direction, state.x, schedule, kernel, N, rng)
        if log_ua <= mp.log_rbar + log_extra:
            return True, mp.endpoints[select_jstar(mp.log_ratios, rng)]
        return False, None
    endpoint, log_rbar_rev = reverse_branch(space, direction, state.x, schedule, kernel, N, rng)
    if log_ua <= -log_rbar_rev + log_extra:
        return True, endpoint
    return False, None


def nrj3_step(state: TransDimState, target: NestedTarget, jump: JumpSpec, tau: float,
              schedule: AnnealingSchedule, kernel: InnerKernel, N: int,
              param_kernel: ParamKernel | None, rng: np.random.Generator) -> StepResult:
    res = param_move(state, tau, param_kernel, rng)
    if res is not None:
        return res
    k_to = state.k + state.nu
    move = MoveKind.SWITCH_UP if state.nu > 0 else MoveKind.SWITCH_DOWN
    if not target.in_support(k_to):
        return StepResult(state.with_nu(-state.nu), move, False)
    ok, y = _attempt(state, k_to, target, jump, schedule, kernel, N, rng)
    if ok:
        return StepResult(TransDimState(k_to, y, state.nu), move, True)
    return StepResult(state.with_nu(-state.nu), move, False)


def rj3_step(state: TransDimState, target: NestedTarget, jump: JumpSpec, tau: float,
             schedule: AnnealingSchedule, kernel: InnerKernel, N: int,
             g: Callable[[int], ModelProposalPmf], param_kernel: ParamKernel | None,
             rng: np.random.Generator) -> StepResult:
    res = param_move(state, tau, param_kernel, rng)
    if res is not None:
        return res
    k_to = draw_neighbour(g, state.k, rng)
    move = MoveKind.SWITCH_UP if k_to > state.k else MoveKind.SWITCH_DOWN
    if not target.in_support(k_to):
        return StepResult(state, move, False)
    ok, y = _attempt(state, k_to, target, jump, schedule, kernel, N, rng,
                     log_g_ratio(g, state.k, k_to))
    if ok:
        return StepResult(TransDimState(k_to, y, 0), move, True)
    return StepResult(state, move, False)


class MultiPathNRJ:
    reversible = False

    def __init__(self, target, jump, schedule, kernel, N, param_kernel=None):
        self.target, self.jump, self.schedule = target, jump, schedule
        self.kernel, self.N, self.param_kernel = kernel, N, param_kernel

    def step(self, state, tau, rng):
        return nrj3_step(state, self.target, self.jump, tau, self.schedule, self.kernel, self.N,
                         self.param_kernel, rng)


class MultiPathRJ:
    reversible = True

    def __init__(self, target, jump, schedule, kernel, N, param_kernel=None, g="symmetric"):
        self.target, self.jump, self.schedule = target, jump, schedule
        self.kernel, self.N, self.param_kernel = kernel, N, param_kernel
        self.g = make_g(g, target)

    def step(self, state, tau, rng):
        return rj3_step(state, self.target, self.jump, tau, self.schedule, self.kernel, self.N,
                        self.g, self.param_kernel, rng)
