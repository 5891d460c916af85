"""Diffusive and ballistic scaling limits of ideal K-chains.

A target on {1..K} concentrating like f_S((k - psi) / sqrt(n)) is explored
by the reversible ideal chain on time scale n, with Langevin limit

    dZ = ((1 - tau) / 2) (log f_S)'(Z) dt + sqrt(1 - tau) dB,

and by the lifted chain on time scale sqrt(n), with a zig-zag limit that
moves at speed (1 - tau) and reverses at rate (1 - tau) max(0, -y (log f_S)'(x)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit


@dataclass(frozen=True)
class LimitDensity:
    """Limit density via its log and log-derivative, plus a sampler.

    ``lipschitz`` bounds the derivative's Lipschitz constant; thinning uses it.
    """

    log_pdf: Callable[[np.ndarray], np.ndarray]
    grad_log_pdf: Callable[[np.ndarray], np.ndarray]
    sample: Callable[[np.random.Generator, int], np.ndarray]
    lipschitz: float
    is_standard_normal: bool = False


STANDARD_NORMAL = LimitDensity(
    log_pdf=lambda x: -0.5 * np.square(x) - 0.5 * math.log(2 * math.pi),
    grad_log_pdf=lambda x: -np.asarray(x, dtype=float),
    sample=lambda rng, size: rng.standard_normal(size),
    lipschitz=1.0,
    is_standard_normal=True,
)


@dataclass(frozen=True)
class RescaledPath:
    """Values Z(t) on a time grid; ``z`` has shape (paths, len(t)).

    ``y`` carries the zig-zag or lifted-chain direction when present.
    """

    t: np.ndarray
    z: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        if self.t[0] != 0 or np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must start at 0 and increase strictly")

    def at(self, time: float) -> np.ndarray:
        """Values at the last grid time not after ``time``."""
        idx = int(np.searchsorted(self.t, time, side="right")) - 1
        return self.z[:, idx]

    def to_csv(self, path, index: int = 0) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,value" + (",direction" if self.y is not None else "") + "\n")
            for i, t in enumerate(self.t):
                row = f"{t:.17g},{self.z[index, i]:.17g}"
                if self.y is not None:
                    row += f",{int(self.y[index, i])}"
                fh.write(row + "\n")


@dataclass(frozen=True)
class DiscretizedTarget:
    n: int
    psi: float
    probs: np.ndarray
    density: LimitDensity = field(default=STANDARD_NORMAL, repr=False)

    @property
    def k_min(self) -> int:
        return 1

    @property
    def k_max(self) -> int:
        return len(self.probs)

    @property
    def log_pmf(self) -> np.ndarray:
        return np.log(self.probs)

    def scaled(self, k) -> np.ndarray:
        return (np.asarray(k, dtype=float) - self.psi) / math.sqrt(self.n)

    def k_at(self, z: float) -> int:
        """Nearest state to scaled position z."""
        return int(np.clip(round(self.psi + z * math.sqrt(self.n)), 1, self.k_max))


def build_discretized_target(n: int, density: LimitDensity = STANDARD_NORMAL) -> DiscretizedTarget:
    """pi^n(k) proportional to f_S((k - psi) / sqrt(n)) on {1..floor(sqrt(n) log n)}."""
    if n < 100:
        raise ValueError(f"n must be at least 100, got {n}")
    K = math.floor(math.sqrt(n) * math.log(n))
    psi = K / 2
    k = np.arange(1, K + 1)
    lp = density.log_pdf((k - psi) / math.sqrt(n))
    p = np.exp(lp - lp.max())
    return DiscretizedTarget(n, psi, p / p.sum(), density)


def _initial(values, size: int, sampler) -> np.ndarray:
    if values is None:
        return sampler(size)
    return np.broadcast_to(np.asarray(values, dtype=float), (size,)).copy()


@njit(cache=True)
def _ou_em(z, drift, sd, n_steps, every, rng, out):
    """Euler-Maruyama for drift * (-z) with noise sd, paths in sequence."""
    for p in range(z.shape[0]):
        x = z[p]
        out[p, 0] = x
        col = 1
        for s in range(1, n_steps + 1):
            x = x - drift * x + sd * rng.standard_normal()
            if s % every == 0:
                out[p, col] = x
                col += 1


def simulate_langevin(density: LimitDensity, tau: float, dt: float, horizon: float,
                      rng: np.random.Generator, n_paths: int = 1, z0=None,
                      record_every: int = 1) -> RescaledPath:
    """Euler-Maruyama paths of the Langevin limit, started from ``z0`` or f_S."""
    if not dt > 0 or not horizon > 0:
        raise ValueError("dt and horizon must be positive")
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    n_steps = int(round(horizon / dt))
    n_rec = n_steps // record_every
    t = np.arange(n_rec + 1) * dt * record_every
    z = _initial(z0, n_paths, lambda m: density.sample(rng, m))
    a = 0.5 * (1 - tau)
    sd = math.sqrt((1 - tau) * dt)
    out = np.empty((n_paths, n_rec + 1))
    if density.is_standard_normal:
        _ou_em(z, a * dt, sd, n_steps, record_every, rng, out)
        return RescaledPath(t, out)
    out[:, 0] = z
    for s in range(1, n_steps + 1):
        z = z + a * density.grad_log_pdf(z) * dt + sd * rng.standard_normal(n_paths)
        if s % record_every == 0:
            out[:, s // record_every] = z
    return RescaledPath(t, out)


def zigzag_flip_rate(density: LimitDensity, x, y, tau: float = 0.0):
    return (1 - tau) * np.maximum(0.0, -np.asarray(y) * density.grad_log_pdf(x))


def normal_event_time(x: float, y: int, tau: float, e: float) -> float:
    """Time to the next flip for f_S standard normal given Exp(1) level e."""
    a = y * x
    c = 1.0 - tau
    return (-a + math.sqrt(max(a, 0.0) ** 2 + 2.0 * e)) / c


@njit(cache=True)
def _zigzag_normal(x0, y0, c, grid, rng, out_z, out_y):
    for p in range(x0.shape[0]):
        x = x0[p]
        y = y0[p]
        t = 0.0
        g = 0
        ng = grid.shape[0]
        while g < ng:
            a = y * x
            e = rng.standard_exponential()
            s = (-a + math.sqrt(max(a, 0.0) ** 2 + 2.0 * e)) / c
            while g < ng and grid[g] <= t + s:
                out_z[p, g] = x + c * y * (grid[g] - t)
                out_y[p, g] = y
                g += 1
            x = x + c * y * s
            t = t + s
            y = -y


def _zigzag_thinning(density: LimitDensity, x: float, y: int, c: float, grid: np.ndarray,
                     rng: np.random.Generator, z_row: np.ndarray, y_row: np.ndarray,
                     window: float = 0.5) -> None:
    t, g = 0.0, 0
    while g < len(grid):
        # Along the ray, rate(s) <= c * (max(0, -y g(x)) + lipschitz * c * s).
        bound = c * (max(0.0, -y * float(density.grad_log_pdf(x))) + density.lipschitz * c * window)
        s = rng.standard_exponential() / bound if bound > 0 else math.inf
        step = min(s, window)
        while g < len(grid) and grid[g] <= t + step:
            z_row[g] = x + c * y * (grid[g] - t)
            y_row[g] = y
            g += 1
        x += c * y * step
        t += step
        if s <= window:
            rate = c * max(0.0, -y * float(density.grad_log_pdf(x)))
            if rng.random() * bound <= rate:
                y = -y


def simulate_zigzag(density: LimitDensity, tau: float, horizon: float, rng: np.random.Generator,
                    n_paths: int = 1, z0=None, y0=None, grid: np.ndarray | None = None,
                    exact: bool | None = None) -> RescaledPath:
    """Zig-zag paths observed on ``grid`` (default 1001 points on [0, horizon]).

    Event times are exact for the standard normal and thinned otherwise.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    grid = np.linspace(0.0, horizon, 1001) if grid is None else np.asarray(grid, dtype=float)
    x = _initial(z0, n_paths, lambda m: density.sample(rng, m))
    if y0 is None:
        y = np.where(rng.random(n_paths) < 0.5, -1, 1).astype(np.int64)
    else:
        y = np.broadcast_to(np.asarray(y0, dtype=np.int64), (n_paths,)).copy()
    out_z = np.empty((n_paths, len(grid)))
    out_y = np.empty((n_paths, len(grid)), dtype=np.int64)
    c = 1.0 - tau
    if c == 0:
        out_z[:] = x[:, None]
        out_y[:] = y[:, None]
        return RescaledPath(grid, out_z, out_y)
    if exact is None:
        exact = density.is_standard_normal
    if exact:
        if not density.is_standard_normal:
            raise ValueError("exact event times are only available for the standard normal")
        _zigzag_normal(x, y, c, grid, rng, out_z, out_y)
    else:
        for p in range(n_paths):
            _zigzag_thinning(density, float(x[p]), int(y[p]), c, grid, rng, out_z[p], out_y[p])
    return RescaledPath(grid, out_z, out_y)


def speed_value(speed, n: int) -> float:
    if speed == "n":
        return float(n)
    if speed in ("sqrt", "sqrt_n"):
        return math.sqrt(n)
    return float(speed)


def rescale_chain(k_path, n: int, psi: float, speed, grid=None, horizon: float = 1.0,
                  nu_path=None) -> RescaledPath:
    """Z(t) = (K(floor(speed t)) - psi) / sqrt(n) on a time grid.

    ``speed`` is ``"n"`` (reversible chains), ``"sqrt"`` (lifted chains) or
    a number of chain steps per unit time.
    """
    k = np.atleast_2d(np.asarray(k_path))
    v = speed_value(speed, n)
    if grid is None:
        steps = int(math.floor(v * horizon + 1e-9))
        grid = np.arange(steps + 1) / v
    grid = np.asarray(grid, dtype=float)
    idx = np.floor(grid * v + 1e-9).astype(np.int64)
    if idx[-1] >= k.shape[1]:
        raise ValueError(f"path has {k.shape[1] - 1} steps, rescaling needs {idx[-1]}")
    z = (k[:, idx] - psi) / math.sqrt(n)
    y = None if nu_path is None else np.atleast_2d(np.asarray(nu_path))[:, idx]
    return RescaledPath(grid, z, y)


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be nonempty")
    pts = np.concatenate((a, b))
    fa = np.searchsorted(a, pts, side="right") / len(a)
    fb = np.searchsorted(b, pts, side="right") / len(b)
    return float(np.abs(fa - fb).max())


def _ks_tied(a, b, decimals: int = 9) -> float:
    # Chain and limit share atoms (e.g. paths that never flip); rounding lets
    # values computed by different arithmetic tie exactly.
    return ks_distance(np.round(a, decimals), np.round(b, decimals))


@dataclass(frozen=True)
class LimitComparison:
    ks_rj_langevin: float
    ks_nrj_zigzag: float
    ks_rj_swapped: float
    ks_nrj_swapped: float


def compare_limits(n: int, replicates: int, rng: np.random.Generator, z0: float = -2.0,
                   tau: float = 0.0, t: float = 1.0, dt: float = 1e-3,
                   limit_paths: int | None = None) -> LimitComparison:
    """t-marginals of rescaled ideal chains against both limits.

    Every chain and limit process starts at the state nearest ``z0``
    (lifted ones with a uniform direction); a stationary start would make
    the fixed-time marginals insensitive to the time scale.  The limit
    processes use ``limit_paths`` paths (default ten per chain replicate).
    """
    from .kernels import ideal_k_endpoints

    tgt = build_discretized_target(n)
    k0 = tgt.k_at(z0)
    zs = float(tgt.scaled(k0))
    sq = math.sqrt(n)
    nu0 = np.where(rng.random(replicates) < 0.5, -1, 1)
    fast, slow = int(round(n * t)), int(round(sq * t))
    rj_n, _ = ideal_k_endpoints(tgt.log_pmf, "rj_unif", fast, rng, k0, k_min=1, tau=tau,
                                n_chains=replicates)
    rj_sq, _ = ideal_k_endpoints(tgt.log_pmf, "rj_unif", slow, rng, k0, k_min=1, tau=tau,
                                 n_chains=replicates)
    nrj_sq, _ = ideal_k_endpoints(tgt.log_pmf, "nrj", slow, rng, k0, nu0, k_min=1, tau=tau,
                                  n_chains=replicates)
    nrj_n, _ = ideal_k_endpoints(tgt.log_pmf, "nrj", fast, rng, k0, nu0, k_min=1, tau=tau,
                                 n_chains=replicates)
    m = 10 * replicates if limit_paths is None else limit_paths
    lang = simulate_langevin(tgt.density, tau, dt, t, rng, m, z0=zs,
                             record_every=int(round(t / dt))).z[:, -1]
    zz = simulate_zigzag(tgt.density, tau, t, rng, m, z0=zs,
                         grid=np.array([0.0, t])).z[:, -1]
    return LimitComparison(
        ks_rj_langevin=_ks_tied(tgt.scaled(rj_n), lang),
        ks_nrj_zigzag=_ks_tied(tgt.scaled(nrj_sq), zz),
        ks_rj_swapped=_ks_tied(tgt.scaled(rj_sq), lang),
        ks_nrj_swapped=_ks_tied(tgt.scaled(nrj_n), zz),
    )
