"""Annealed-bridge model switches.

A switch between models k and k+1 walks an inhomogeneous chain through
geometric interpolations between the two ends of the boundary.  Every point
of the walk is stored in both parameterizations, and the interpolation is
written in the measure of (y_{k+1}, u_down):

    lower(z) = log pi(k, x) + log q_up(u) - log|J(x, u)|
    upper(z) = log pi(k+1, y) + log q_down(u_rev)
    log rho_lam(z) = (1 - lam) lower(z) + lam upper(z)

An upward switch uses lam_t = gamma_t and a downward one lam_t = gamma_{T-t},
so one kernel indexed by ``lam`` serves both directions and the pairing
K_up^(t) = K_down^(T-t) holds by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import MoveKind, NestedTarget, StepResult, TransDimState
from .kernels import (JumpSpec, ModelProposalPmf, ParamKernel, draw_neighbour, log_g_ratio,
                      log_uniform, make_g, param_move)

UP, DOWN = 1, -1


@dataclass(frozen=True)
class AnnealingSchedule:
    gammas: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gammas, dtype=float)
        if g.ndim != 1 or len(g) < 2:
            raise ValueError("schedule needs gamma_0..gamma_T with T >= 1")
        if g[0] != 0.0 or g[-1] != 1.0:
            raise ValueError("schedule must start at 0 and end at 1")
        if np.any(np.diff(g) < 0) or np.any((g < 0) | (g > 1)):
            raise ValueError("schedule must be nondecreasing in [0, 1]")
        object.__setattr__(self, "gammas", g)

    @classmethod
    def linear(cls, T: int) -> "AnnealingSchedule":
        if T < 1:
            raise ValueError("T must be at least 1")
        return cls(np.arange(T + 1) / T)

    @property
    def T(self) -> int:
        return len(self.gammas) - 1

    def weights(self, direction: int) -> np.ndarray:
        """Weight lam_t on the k+1 end for t = 0..T."""
        return self.gammas if direction == UP else self.gammas[::-1]


@dataclass(frozen=True)
class BridgePoint:
    """A point of a bridge between models k (``x, u``) and k+1 (``y, u_rev``)."""

    k: int
    x: np.ndarray
    u: object
    y: np.ndarray
    u_rev: object
    log_jac: float
    log_lower: float
    log_upper: float

    def log_rho(self, lam: float) -> float:
        if lam == 0.0:
            return self.log_lower
        if lam == 1.0:
            return self.log_upper
        return (1.0 - lam) * self.log_lower + lam * self.log_upper

    @property
    def log_gap(self) -> float:
        """upper - lower, the log increment of the ratio per unit of lam."""
        if self.log_upper == -math.inf:
            return -math.inf
        if self.log_lower == -math.inf:
            return math.inf
        return self.log_upper - self.log_lower


class BridgeSpace:
    """Builds bridge points for the boundary (k, k+1) of a target."""

    def __init__(self, target: NestedTarget, jump: JumpSpec, k: int):
        self.target, self.jump, self.k = target, jump, k

    def from_lower(self, x: np.ndarray, u) -> BridgePoint:
        y, u_rev, log_jac = self.jump.forward(self.k, x, u)
        return self._point(x, u, y, u_rev, log_jac)

    def from_upper(self, y: np.ndarray, u_rev) -> BridgePoint:
        x, u, log_jac_inv = self.jump.inverse(self.k, y, u_rev)
        return self._point(x, u, y, u_rev, -log_jac_inv)

    def _point(self, x, u, y, u_rev, log_jac) -> BridgePoint:
        k, t, j = self.k, self.target, self.jump
        lower = t.log_joint(k, x) + j.log_q_up(k, x, u) - log_jac
        upper = t.log_joint(k + 1, y) + j.log_q_down(k, y, u_rev)
        lower = lower if np.isfinite(lower) else -math.inf
        upper = upper if np.isfinite(upper) else -math.inf
        return BridgePoint(k, x, u, y, u_rev, log_jac, lower, upper)

    def start(self, direction: int, params: np.ndarray, rng: np.random.Generator) -> BridgePoint:
        """z_0: current parameters completed by a fresh auxiliary draw."""
        if direction == UP:
            return self.from_lower(params, self.jump.sample_up(self.k, params, rng))
        return self.from_upper(params, self.jump.sample_down(self.k, params, rng))


def log_rho(t: int, schedule: AnnealingSchedule, point: BridgePoint, direction: int = UP) -> float:
    """Unnormalized log density of the t-th intermediate distribution."""
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside 0..{schedule.T}")
    return point.log_rho(float(schedule.weights(direction)[t]))


class InnerKernel(Protocol):
    """A rho_lam-invariant Markov kernel on bridge points."""

    def step(self, space: BridgeSpace, point: BridgePoint, lam: float,
             rng: np.random.Generator) -> BridgePoint: ...


@dataclass(frozen=True)
class InnerKernelPair:
    """The kernels used at step t of an upward and a downward bridge.

    Both directions share one kernel object, differing only in ``lam``.
    """

    kernel: InnerKernel
    schedule: AnnealingSchedule

    def up(self, t: int) -> tuple[InnerKernel, float]:
        return self.kernel, float(self.schedule.weights(UP)[t])

    def down(self, t: int) -> tuple[InnerKernel, float]:
        return self.kernel, float(self.schedule.weights(DOWN)[t])


Proposal = Callable[[BridgeSpace, BridgePoint, np.random.Generator], tuple[BridgePoint, float]]


def inner_mh_step(point: BridgePoint, lam: float, proposal: Proposal, space: BridgeSpace,
                  rng: np.random.Generator) -> BridgePoint:
    """One Metropolis-Hastings step for rho_lam.

    ``proposal`` returns a candidate and log q(cand -> point) - log q(point -> cand).
    It must not depend on ``lam``.
    """
    cand, log_q_ratio = proposal(space, point, rng)
    log_ua = log_uniform(rng)
    new = cand.log_rho(lam)
    if new == -math.inf:
        return point
    if log_ua <= new - point.log_rho(lam) + log_q_ratio:
        return cand
    return point


class MHSweepKernel:
    """Applies each proposal once per step, in a uniformly random order."""

    def __init__(self, proposals: Sequence[Proposal]):
        self.proposals = list(proposals)

    def step(self, space, point, lam, rng):
        for i in rng.permutation(len(self.proposals)):
            point = inner_mh_step(point, lam, self.proposals[i], space, rng)
        return point


@dataclass
class BridgePath:
    direction: int
    points: list[BridgePoint]
    log_ratio: float
    weights: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return len(self.weights) - 1

    @property
    def endpoint(self) -> np.ndarray:
        """Parameters proposed for the destination model."""
        last = self.points[-1]
        return last.y if self.direction == UP else last.x


def _increment(point: BridgePoint, dlam: float) -> float:
    if dlam == 0.0:
        return 0.0
    return float(dlam) * point.log_gap


def forward_bridge(space: BridgeSpace, direction: int, params: np.ndarray,
                   schedule: AnnealingSchedule, kernel: InnerKernel,
                   rng: np.random.Generator, keep_path: bool = True) -> BridgePath:
    """Walk z_0, ..., z_{T-1} and accumulate the telescoping log ratio."""
    lam = schedule.weights(direction)
    z = space.start(direction, params, rng)
    points = [z]
    log_r = _increment(z, lam[1] - lam[0])
    for t in range(1, schedule.T):
        z = kernel.step(space, z, float(lam[t]), rng)
        if keep_path:
            points.append(z)
        log_r += _increment(z, lam[t + 1] - lam[t])
    if not keep_path:
        points = [z]
    if math.isnan(log_r):
        log_r = -math.inf
    return BridgePath(direction, points, log_r, lam)


def recompute_log_ratio(path: BridgePath, space: BridgeSpace) -> float:
    """Sum of log rho^(t+1)(z_t) - log rho^(t)(z_t), re-evaluating every density."""
    total = 0.0
    for t, z in enumerate(path.points):
        fresh = space.from_lower(z.x, z.u) if path.direction == UP else space.from_upper(z.y, z.u_rev)
        total += fresh.log_rho(float(path.weights[t + 1])) - fresh.log_rho(float(path.weights[t]))
    return total


def bridge_batch(space: BridgeSpace, direction: int, params: np.ndarray,
                 schedule: AnnealingSchedule, kernel: InnerKernel, n_paths: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, list[np.ndarray]]:
    """Log ratios and endpoints of ``n_paths`` independent bridges from ``params``.

    Paths are generated one after another on ``rng`` in index order.
    Kernels may provide a vectorised ``run_bridges`` with the same contract.
    """
    fast = getattr(kernel, "run_bridges", None)
    if fast is not None:
        return fast(space, direction, params, schedule, n_paths, rng)
    log_r = np.empty(n_paths)
    ends = []
    for j in range(n_paths):
        path = forward_bridge(space, direction, params, schedule, kernel, rng, keep_path=False)
        log_r[j] = path.log_ratio
        ends.append(path.endpoint)
    return log_r, ends


def _switch_move(k: int, k_to: int) -> MoveKind:
    return MoveKind.SWITCH_UP if k_to > k else MoveKind.SWITCH_DOWN


def _space(target, jump, k, k_to) -> tuple[BridgeSpace, int]:
    return BridgeSpace(target, jump, min(k, k_to)), (UP if k_to > k else DOWN)


def nrj2_step(state: TransDimState, target: NestedTarget, jump: JumpSpec, tau: float,
              schedule: AnnealingSchedule, kernel: InnerKernel,
              param_kernel: ParamKernel | None, rng: np.random.Generator) -> StepResult:
    res = param_move(state, tau, param_kernel, rng)
    if res is not None:
        return res
    k_to = state.k + state.nu
    move = _switch_move(state.k, k_to)
    if not target.in_support(k_to):
        return StepResult(state.with_nu(-state.nu), move, False)
    log_ua = log_uniform(rng)
    space, direction = _space(target, jump, state.k, k_to)
    log_r, ends = bridge_batch(space, direction, state.x, schedule, kernel, 1, rng)
    if log_ua <= log_r[0]:
        return StepResult(TransDimState(k_to, ends[0], state.nu), move, True)
    return StepResult(state.with_nu(-state.nu), move, False)


def rj2_step(state: TransDimState, target: NestedTarget, jump: JumpSpec, tau: float,
             schedule: AnnealingSchedule, kernel: InnerKernel,
             g: Callable[[int], ModelProposalPmf], param_kernel: ParamKernel | None,
             rng: np.random.Generator) -> StepResult:
    res = param_move(state, tau, param_kernel, rng)
    if res is not None:
        return res
    k_to = draw_neighbour(g, state.k, rng)
    move = _switch_move(state.k, k_to)
    if not target.in_support(k_to):
        return StepResult(state, move, False)
    log_ua = log_uniform(rng)
    space, direction = _space(target, jump, state.k, k_to)
    log_r, ends = bridge_batch(space, direction, state.x, schedule, kernel, 1, rng)
    if log_ua <= log_r[0] + log_g_ratio(g, state.k, k_to):
        return StepResult(TransDimState(k_to, ends[0], 0), move, True)
    return StepResult(state, move, False)


class AnnealedNRJ:
    reversible = False

    def __init__(self, target, jump, schedule, kernel, param_kernel=None):
        self.target, self.jump, self.schedule = target, jump, schedule
        self.kernel, self.param_kernel = kernel, param_kernel

    def step(self, state, tau, rng):
        return nrj2_step(state, self.target, self.jump, tau, self.schedule, self.kernel,
                         self.param_kernel, rng)


class AnnealedRJ:
    reversible = True

    def __init__(self, target, jump, schedule, kernel, param_kernel=None, g="symmetric"):
        self.target, self.jump, self.schedule = target, jump, schedule
        self.kernel, self.param_kernel = kernel, param_kernel
        self.g = make_g(g, target)

    def step(self, state, tau, rng):
        return rj2_step(state, self.target, self.jump, tau, self.schedule, self.kernel, self.g,
                        self.param_kernel, rng)
