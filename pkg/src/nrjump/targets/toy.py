"""Nested Gaussian target with a geometric model PMF and tunable jump noise.

Model k has k iid standard normal parameters.  An upward jump appends
u ~ N(0, sigma^2), so the acceptance ratio differs from the ideal one by

    eps(u) = phi_std(u) / q(u) = sigma * exp(-u^2 (1 - sigma^-2) / 2),

which is identically 1 when sigma = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..annealed import UP, AnnealingSchedule, BridgePoint, BridgeSpace, InnerKernelPair
from ..core import NestedTarget
from ..kernels import JumpSpec

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
EMPTY = np.empty(0)


@dataclass(frozen=True)
class PhiPmf:
    """Geometric decay by 1/phi on each side of the central mode of {1..K_max}."""

    phi: float
    k_max: int
    probs: np.ndarray

    @property
    def k_min(self) -> int:
        return 1

    @property
    def mode(self) -> int:
        return (self.k_max + 1) // 2

    def log_pmf(self) -> np.ndarray:
        return np.log(self.probs)

    def __call__(self, k: int) -> float:
        return float(self.probs[k - 1])


def phi_pmf(phi: float, k_max: int) -> PhiPmf:
    if not phi > 1:
        raise ValueError(f"phi must exceed 1, got {phi}; use uniform_pmf for the flat case")
    if k_max < 3 or k_max % 2 == 0:
        raise ValueError(f"K_max must be odd and at least 3, got {k_max}")
    mode = (k_max + 1) // 2
    dist = np.abs(np.arange(1, k_max + 1) - mode)
    logp = -dist * math.log(phi)
    probs = np.exp(logp - logp.max())
    return PhiPmf(float(phi), k_max, probs / probs.sum())


def uniform_pmf(k_max: int) -> PhiPmf:
    if k_max < 1:
        raise ValueError("K_max must be positive")
    return PhiPmf(1.0, k_max, np.full(k_max, 1.0 / k_max))


def tail_mass(pmf: PhiPmf, half_width: int = 1) -> float:
    """Probability outside {k* - w, ..., k* + w}."""
    k = np.arange(1, pmf.k_max + 1)
    return float(pmf.probs[np.abs(k - pmf.mode) > half_width].sum())


def log_noise(u, sigma: float):
    """log eps(u) in closed form."""
    return math.log(sigma) - 0.5 * np.square(u) * (1.0 - sigma ** -2)


class ToyTarget(NestedTarget):
    def __init__(self, pmf: PhiPmf, sigma: float = 1.0):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.pmf, self.sigma = pmf, float(sigma)
        self.k_min, self.k_max = 1, pmf.k_max
        self._log_p = np.log(pmf.probs)

    def dim(self, k: int) -> int:
        return k

    def log_model_pmf(self, k: int) -> float:
        return float(self._log_p[k - 1])

    def log_joint(self, k: int, x: np.ndarray) -> float:
        if not self.in_support(k) or len(x) != k:
            return -math.inf
        return float(self._log_p[k - 1] - 0.5 * np.dot(x, x) - k * LOG_SQRT_2PI)

    def conditional_sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(k)

    def param_kernel(self, k: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Independence resampling from the exact conditional."""
        return self.conditional_sample(k, rng)


class ToyJump(JumpSpec):
    """Append u ~ N(0, sigma^2) going up; drop the last coordinate going down."""

    def __init__(self, sigma: float):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)
        self._log_norm = math.log(self.sigma) + LOG_SQRT_2PI

    def sample_up(self, k, x, rng):
        return rng.normal(0.0, self.sigma)

    def log_q_up(self, k, x, u):
        return -0.5 * (u / self.sigma) ** 2 - self._log_norm

    def forward(self, k, x, u):
        return np.append(x, u), EMPTY, 0.0

    def inverse(self, k, y, u_rev):
        return y[:-1], float(y[-1]), 0.0

    def sample_down(self, k, y, rng):
        return EMPTY

    def log_q_down(self, k, y, u_rev):
        return 0.0


def toy_jump_spec(sigma: float) -> ToyJump:
    return ToyJump(sigma)


def bridge_variance(sigma: float, lam: float) -> float:
    """Variance of u under rho_lam, with lam the weight on model k+1."""
    return 1.0 / ((1.0 - lam) / sigma ** 2 + lam)


class ToyBridgeKernel:
    """Exact independence draws u ~ rho_lam, keeping x_k fixed."""

    def __init__(self, sigma: float):
        self.sigma = float(sigma)

    def step(self, space: BridgeSpace, point: BridgePoint, lam: float, rng) -> BridgePoint:
        u = rng.normal(0.0, math.sqrt(bridge_variance(self.sigma, lam)))
        return space.from_lower(point.x, u)

    def run_bridges(self, space: BridgeSpace, direction: int, params: np.ndarray,
                    schedule: AnnealingSchedule, n_paths: int, rng):
        """All ``n_paths`` bridges at once, consuming draws in path-major order."""
        lam = schedule.weights(direction)
        T = schedule.T
        dlam = np.diff(lam)
        sd = np.sqrt(1.0 / ((1.0 - lam[1:T]) / self.sigma ** 2 + lam[1:T]))
        log_p = space.target.log_model_pmf(space.k + 1) - space.target.log_model_pmf(space.k)
        if direction == UP:
            z = rng.standard_normal((n_paths, T))
            u = z * np.concatenate(([self.sigma], sd))
            x = params
        else:
            u = np.empty((n_paths, T))
            u[:, 0] = params[-1]
            if T > 1:
                u[:, 1:] = rng.standard_normal((n_paths, T - 1)) * sd
            x = params[:-1]
        gap = log_p + log_noise(u, self.sigma)
        log_r = (gap * dlam).sum(axis=1)
        if direction == UP:
            ends = [np.append(x, v) for v in u[:, -1]]
        else:
            ends = [x] * n_paths
        return log_r, ends


def toy_bridge_kernels(sigma: float, schedule: AnnealingSchedule):
    return InnerKernelPair(ToyBridgeKernel(sigma), schedule)


def toy_conditional_sample(k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(k)
