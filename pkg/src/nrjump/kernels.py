"""Vanilla reversible and lifted jump kernels, ideal K-chains, informed proposals."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .core import MoveKind, NestedTarget, StepResult, TransDimState

ParamKernel = Callable[[int, np.ndarray, np.random.Generator], np.ndarray]

NRJ, RJ_UNIF, RJ_INFORMED = 0, 1, 2
IDEAL_KINDS = {"nrj": NRJ, "rj_unif": RJ_UNIF, "rj_informed": RJ_INFORMED}


def log_uniform(rng: np.random.Generator) -> float:
    u = rng.random()
    return math.log(u) if u > 0.0 else -math.inf


class JumpSpec(ABC):
    """Auxiliary variables and diffeomorphism for every boundary k <-> k+1.

    ``k`` always names the lower model of the boundary.  ``forward`` maps
    (x_k, u_up) to (y_{k+1}, u_down) and returns log|J| of that map;
    ``inverse`` undoes it and returns the log-Jacobian of the inverse map.
    """

    @abstractmethod
    def sample_up(self, k: int, x: np.ndarray, rng: np.random.Generator): ...

    @abstractmethod
    def log_q_up(self, k: int, x: np.ndarray, u) -> float: ...

    @abstractmethod
    def forward(self, k: int, x: np.ndarray, u) -> tuple[np.ndarray, object, float]: ...

    @abstractmethod
    def inverse(self, k: int, y: np.ndarray, u_rev) -> tuple[np.ndarray, object, float]: ...

    @abstractmethod
    def sample_down(self, k: int, y: np.ndarray, rng: np.random.Generator): ...

    @abstractmethod
    def log_q_down(self, k: int, y: np.ndarray, u_rev) -> float: ...


@dataclass(frozen=True)
class SwitchProposal:
    k_from: int
    k_to: int
    x_from: np.ndarray
    x_to: np.ndarray
    log_q_fwd: float
    log_q_rev: float
    log_jac: float

    def log_ratio(self, target: NestedTarget, log_g_ratio: float = 0.0) -> float:
        """Log acceptance ratio before truncation at zero."""
        num = target.log_joint(self.k_to, self.x_to)
        if not np.isfinite(num) or not np.isfinite(self.log_q_rev):
            return -math.inf
        den = target.log_joint(self.k_from, self.x_from)
        return (log_g_ratio + num + self.log_q_rev - den - self.log_q_fwd + self.log_jac)


def propose_switch(jump: JumpSpec, k: int, x: np.ndarray, k_to: int,
                   rng: np.random.Generator) -> SwitchProposal:
    if k_to == k + 1:
        u = jump.sample_up(k, x, rng)
        y, u_rev, log_jac = jump.forward(k, x, u)
        return SwitchProposal(k, k_to, x, y, jump.log_q_up(k, x, u),
                              jump.log_q_down(k, y, u_rev), log_jac)
    if k_to == k - 1:
        u_rev = jump.sample_down(k_to, x, rng)
        x_low, u, log_jac_inv = jump.inverse(k_to, x, u_rev)
        return SwitchProposal(k, k_to, x, x_low, jump.log_q_down(k_to, x, u_rev),
                              jump.log_q_up(k_to, x_low, u), log_jac_inv)
    raise ValueError(f"only nearest-neighbour switches are supported, got {k} -> {k_to}")


def log_accept_rj(target: NestedTarget, proposal: SwitchProposal,
                  log_g_ratio: float = 0.0) -> float:
    """min(0, log acceptance ratio) of a trans-dimensional proposal."""
    return min(0.0, proposal.log_ratio(target, log_g_ratio))


@dataclass(frozen=True)
class ModelProposalPmf:
    """Probabilities of proposing k-1 and k+1 from the current model."""

    down: float
    up: float

    def __post_init__(self):
        if self.down < 0 or self.up < 0 or abs(self.down + self.up - 1.0) > 1e-12:
            raise ValueError(f"invalid neighbour PMF ({self.down}, {self.up})")

    def prob(self, step: int) -> float:
        return self.up if step == 1 else self.down


def symmetric_g(k: int) -> ModelProposalPmf:
    """Half mass on each neighbour; off-support draws are rejected downstream."""
    return ModelProposalPmf(0.5, 0.5)


def informed_g(k: int, log_pmf: Callable[[int], float], k_min: int, k_max: int) -> ModelProposalPmf:
    """Neighbour probabilities proportional to sqrt(pi(k')/pi(k)) over valid neighbours."""
    if k_min == k_max:
        raise ValueError("informed proposal needs at least two models")
    here = log_pmf(k)
    w_down = math.exp(0.5 * (log_pmf(k - 1) - here)) if k - 1 >= k_min else 0.0
    w_up = math.exp(0.5 * (log_pmf(k + 1) - here)) if k + 1 <= k_max else 0.0
    total = w_down + w_up
    return ModelProposalPmf(w_down / total, w_up / total)


def make_g(kind: str, target: NestedTarget) -> Callable[[int], ModelProposalPmf]:
    if kind in ("symmetric", "unif", "rj_unif"):
        return symmetric_g
    if kind in ("informed", "rj_informed"):
        lp = target.log_model_pmf
        return lambda k: informed_g(k, lp, target.k_min, target.k_max)
    raise ValueError(f"unknown model proposal {kind!r}")


def log_g_ratio(g: Callable[[int], ModelProposalPmf], k: int, k_to: int) -> float:
    step = k_to - k
    return math.log(g(k_to).prob(-step)) - math.log(g(k).prob(step))


def draw_neighbour(g: Callable[[int], ModelProposalPmf], k: int, rng: np.random.Generator) -> int:
    return k + 1 if rng.random() < g(k).up else k - 1


def _move(k: int, k_to: int) -> MoveKind:
    return MoveKind.SWITCH_UP if k_to > k else MoveKind.SWITCH_DOWN


def param_move(state: TransDimState, tau: float, param_kernel: ParamKernel | None,
               rng: np.random.Generator) -> StepResult | None:
    """Step 2(a) of the outer loop; ``None`` means a switch should be attempted."""
    if tau <= 0.0:
        return None
    if tau < 1.0 and rng.random() > tau:
        return None
    x = state.x if param_kernel is None else param_kernel(state.k, state.x, rng)
    return StepResult(TransDimState(state.k, x, state.nu), MoveKind.PARAM_UPDATE, True)


def nrj_step(state: TransDimState, target: NestedTarget, jump: JumpSpec, tau: float,
             param_kernel: ParamKernel | None, rng: np.random.Generator) -> StepResult:
    res = param_move(state, tau, param_kernel, rng)
    if res is not None:
        return res
    k_to = state.k + state.nu
    move = _move(state.k, k_to)
    if not target.in_support(k_to):
        return StepResult(state.with_nu(-state.nu), move, False)
    log_ua = log_uniform(rng)
    prop = propose_switch(jump, state.k, state.x, k_to, rng)
    if log_ua <= prop.log_ratio(target):
        return StepResult(TransDimState(k_to, prop.x_to, state.nu), move, True)
    return StepResult(state.with_nu(-state.nu), move, False)


def rj_step(state: TransDimState, target: NestedTarget, jump: JumpSpec, tau: float,
            g: Callable[[int], ModelProposalPmf], param_kernel: ParamKernel | None,
            rng: np.random.Generator) -> StepResult:
    res = param_move(state, tau, param_kernel, rng)
    if res is not None:
        return res
    k_to = draw_neighbour(g, state.k, rng)
    move = _move(state.k, k_to)
    if not target.in_support(k_to):
        return StepResult(state, move, False)
    log_ua = log_uniform(rng)
    prop = propose_switch(jump, state.k, state.x, k_to, rng)
    if log_ua <= prop.log_ratio(target, log_g_ratio(g, state.k, k_to)):
        return StepResult(TransDimState(k_to, prop.x_to, 0), move, True)
    return StepResult(state, move, False)


class VanillaNRJ:
    reversible = False

    def __init__(self, target: NestedTarget, jump: JumpSpec, param_kernel: ParamKernel | None = None):
        self.target, self.jump, self.param_kernel = target, jump, param_kernel

    def step(self, state, tau, rng):
        return nrj_step(state, self.target, self.jump, tau, self.param_kernel, rng)


class VanillaRJ:
    reversible = True

    def __init__(self, target: NestedTarget, jump: JumpSpec, param_kernel: ParamKernel | None = None,
                 g: str = "symmetric"):
        self.target, self.jump, self.param_kernel = target, jump, param_kernel
        self.g = make_g(g, target)

    def step(self, state, tau, rng):
        return rj_step(state, self.target, self.jump, tau, self.g, self.param_kernel, rng)


class IdealNRJ:
    """Switches accepted with 1 ^ pi(k')/pi(k); parameters redrawn from pi(.|k')."""

    reversible = False

    def __init__(self, target: NestedTarget, param_kernel: ParamKernel | None = None):
        self.target, self.param_kernel = target, param_kernel

    def step(self, state, tau, rng):
        res = param_move(state, tau, self.param_kernel, rng)
        if res is not None:
            return res
        t = self.target
        k_to = state.k + state.nu
        move = _move(state.k, k_to)
        if t.in_support(k_to) and log_uniform(rng) <= t.log_model_pmf(k_to) - t.log_model_pmf(state.k):
            return StepResult(TransDimState(k_to, t.conditional_sample(k_to, rng), state.nu), move, True)
        return StepResult(state.with_nu(-state.nu), move, False)


class IdealRJ:
    reversible = True

    def __init__(self, target: NestedTarget, param_kernel: ParamKernel | None = None,
                 g: str = "symmetric"):
        self.target, self.param_kernel = target, param_kernel
        self.g = make_g(g, target)

    def step(self, state, tau, rng):
        res = param_move(state, tau, self.param_kernel, rng)
        if res is not None:
            return res
        t = self.target
        k_to = draw_neighbour(self.g, state.k, rng)
        move = _move(state.k, k_to)
        if not t.in_support(k_to):
            return StepResult(state, move, False)
        lr = t.log_model_pmf(k_to) - t.log_model_pmf(state.k) + log_g_ratio(self.g, state.k, k_to)
        if log_uniform(rng) <= lr:
            return StepResult(TransDimState(k_to, t.conditional_sample(k_to, rng), 0), move, True)
        return StepResult(state, move, False)


# Ideal chains on a model PMF alone.  ``log_pmf[i]`` is log pi(k_min + i).

def _informed_probs(log_pmf: np.ndarray) -> np.ndarray:
    """Row i holds (g(i, i-1), g(i, i+1)) of the informed proposal."""
    K = len(log_pmf)
    w = np.zeros((K, 2))
    w[1:, 0] = np.exp(0.5 * (log_pmf[:-1] - log_pmf[1:]))
    w[:-1, 1] = np.exp(0.5 * (log_pmf[1:] - log_pmf[:-1]))
    return w / w.sum(axis=1, keepdims=True)


def ideal_k_step(log_pmf: np.ndarray, k: int, nu: int | None, kind: str,
                 rng: np.random.Generator, k_min: int = 0) -> tuple[int, int | None]:
    """One switch step of an ideal sampler on the marginal PMF."""
    log_pmf = np.asarray(log_pmf, dtype=float)
    K = len(log_pmf)
    i = k - k_min
    if kind == "nrj":
        j = i + nu
        if 0 <= j < K and log_uniform(rng) <= log_pmf[j] - log_pmf[i]:
            return k + nu, nu
        return k, -nu
    if kind == "rj_unif":
        j = i + 1 if rng.random() < 0.5 else i - 1
        if 0 <= j < K and log_uniform(rng) <= log_pmf[j] - log_pmf[i]:
            return k_min + j, nu
        return k, nu
    if kind == "rj_informed":
        g = _informed_probs(log_pmf)
        up = rng.random() < g[i, 1]
        j = i + 1 if up else i - 1
        lr = log_pmf[j] - log_pmf[i] + math.log(g[j, 0 if up else 1]) - math.log(g[i, 1 if up else 0])
        if log_uniform(rng) <= lr:
            return k_min + j, nu
        return k, nu
    raise ValueError(f"unknown ideal sampler {kind!r}")


@njit(cache=True)
def _ideal_run(log_pmf, g, kind, n_steps, i0, nu0, tau, rng, out_i, out_nu, record):
    K = log_pmf.shape[0]
    i = i0
    nu = nu0
    if record:
        out_i[0] = i
        out_nu[0] = nu
    for s in range(1, n_steps + 1):
        if tau > 0.0 and (tau >= 1.0 or rng.random() <= tau):
            pass
        elif kind == 0:
            j = i + nu
            if 0 <= j < K:
                u = rng.random()
                if u == 0.0 or math.log(u) <= log_pmf[j] - log_pmf[i]:
                    i = j
                else:
                    nu = -nu
            else:
                nu = -nu
        elif kind == 1:
            j = i + 1 if rng.random() < 0.5 else i - 1
            if 0 <= j < K:
                u = rng.random()
                if u == 0.0 or math.log(u) <= log_pmf[j] - log_pmf[i]:
                    i = j
        else:
            up = rng.random() < g[i, 1]
            if up:
                j = i + 1
                lr = log_pmf[j] - log_pmf[i] + math.log(g[j, 0]) - math.log(g[i, 1])
            else:
                j = i - 1
                lr = log_pmf[j] - log_pmf[i] + math.log(g[j, 1]) - math.log(g[i, 0])
            u = rng.random()
            if u == 0.0 or math.log(u) <= lr:
                i = j
        if record:
            out_i[s] = i
            out_nu[s] = nu
    return i, nu


def _ideal_setup(log_pmf, kind):
    log_pmf = np.ascontiguousarray(log_pmf, dtype=np.float64)
    code = IDEAL_KINDS[kind]
    g = _informed_probs(log_pmf) if code == RJ_INFORMED else np.zeros((len(log_pmf), 2))
    return log_pmf, code, g


def simulate_ideal_k(log_pmf: np.ndarray, kind: str, n_steps: int, rng: np.random.Generator,
                     k0: int | np.ndarray, nu0: int | np.ndarray = 1, k_min: int = 0,
                     tau: float = 0.0, n_chains: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Paths of ``n_chains`` ideal K-chains, shape (n_chains, n_steps + 1).

    Chains run one after another on ``rng``; with ``tau == 0`` each step
    consumes the same uniforms as :func:`ideal_k_step`.
    """
    lp, code, g = _ideal_setup(log_pmf, kind)
    k0 = np.broadcast_to(np.asarray(k0), (n_chains,))
    nu0 = np.broadcast_to(np.asarray(nu0), (n_chains,))
    ks = np.empty((n_chains, n_steps + 1), dtype=np.int64)
    nus = np.empty((n_chains, n_steps + 1), dtype=np.int64)
    for c in range(n_chains):
        _ideal_run(lp, g, code, n_steps, int(k0[c]) - k_min, int(nu0[c]), float(tau), rng,
                   ks[c], nus[c], True)
    return ks + k_min, nus


def ideal_k_endpoints(log_pmf: np.ndarray, kind: str, n_steps: int, rng: np.random.Generator,
                      k0: int | np.ndarray, nu0: int | np.ndarray = 1, k_min: int = 0,
                      tau: float = 0.0, n_chains: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Final (k, nu) of independent ideal chains without storing paths."""
    lp, code, g = _ideal_setup(log_pmf, kind)
    k0 = np.broadcast_to(np.asarray(k0), (n_chains,))
    nu0 = np.broadcast_to(np.asarray(nu0), (n_chains,))
    ks = np.empty(n_chains, dtype=np.int64)
    nus = np.empty(n_chains, dtype=np.int64)
    dummy = np.empty(1, dtype=np.int64)
    for c in range(n_chains):
        ks[c], nus[c] = _ideal_run(lp, g, code, n_steps, int(k0[c]) - k_min, int(nu0[c]),
                                   float(tau), rng, dummy, dummy, False)
    return ks + k_min, nus


def ideal_transition_matrix(log_pmf: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Exact transition matrix and stationary law of an ideal switch chain.

    The lifted chain indexes state (i, nu) as ``2 i + (0 if nu == +1 else 1)``.
    """
    lp = np.asarray(log_pmf, dtype=float)
    pi = np.exp(lp - lp.max())
    pi /= pi.sum()
    K = len(lp)

    def acc(i, j):
        return min(1.0, math.exp(lp[j] - lp[i]))

    if kind == "nrj":
        P = np.zeros((2 * K, 2 * K))
        for i in range(K):
            for s, (nu, j) in enumerate(((1, i + 1), (-1, i - 1))):
                a = acc(i, j) if 0 <= j < K else 0.0
                if a > 0:
                    P[2 * i + s, 2 * j + s] += a
                P[2 * i + s, 2 * i + 1 - s] += 1.0 - a
        return P, np.repeat(pi, 2) / 2
    P = np.zeros((K, K))
    g = _informed_probs(lp) if kind == "rj_informed" else np.full((K, 2), 0.5)
    for i in range(K):
        for s, j in ((0, i - 1), (1, i + 1)):
            if not 0 <= j < K:
                P[i, i] += g[i, s]
                continue
            a = min(1.0, pi[j] * g[j, 1 - s] / (pi[i] * g[i, s]))
            P[i, j] += g[i, s] * a
            P[i, i] += g[i, s] * (1 - a)
    return P, pi
