"""Multiple change-point model for a Poisson process with a step intensity.

Model k has change points 0 < s_1 < ... < s_k < L and heights h_1..h_{k+1}.
The parameter vector is ``x = (s_1..s_k, h_1..h_{k+1})`` of length 2k+1.
Priors: k ~ Poisson(lam) truncated to {0..K_max}; the change points are the
even order statistics of 2k+1 uniforms on [0, L]; heights are iid
Gamma(alpha, rate beta).

Splitting inserts s* ~ U[0, L] inside step j* and replaces its height h by
(h1, h2) with h1^w h2^(1-w) = h, where w is the fraction of the step left of
s*, and h2/h1 = (1-u_p)/u_p for u_p ~ U[0, 1].  The Jacobian of
(h, u_p) -> (h1, h2) is (h1 + h2)^2 / h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from ..annealed import BridgePoint, BridgeSpace, MHSweepKernel, inner_mh_step
from ..core import NestedTarget
from ..kernels import JumpSpec

COAL_L = 40907.0
COAL_FILE = "coal_days.txt"
REFERENCE_FILE = "coal_reference_pmf.csv"
COLLISION_TOL = 1e-12


class DataError(ValueError):
    """Raised for malformed or out-of-range event data."""


def load_event_data(source, L: float) -> np.ndarray:
    """Sorted event times from a text file (or a sequence of lines).

    One nonnegative decimal per line; blank lines and ``#`` comments are skipped.
    """
    if isinstance(source, (str, Path)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = list(source)
    times = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            t = float(text)
        except ValueError:
            raise DataError(f"line {lineno}: cannot parse {raw.strip()!r} as a time") from None
        if not math.isfinite(t) or t < 0:
            raise DataError(f"line {lineno}: negative or non-finite time {t}")
        if t > L:
            raise DataError(f"line {lineno}: time {t} exceeds L={L}")
        times.append(t)
    return np.sort(np.array(times, dtype=float))


def coal_times() -> np.ndarray:
    with resources.files("nrjump.data").joinpath(COAL_FILE).open("r", encoding="utf-8") as fh:
        return load_event_data(fh.read().splitlines(), COAL_L)


def read_reference_pmf(path=None) -> np.ndarray:
    """Reference posterior model PMF from a ``k,probability`` CSV."""
    if path is None:
        text = resources.files("nrjump.data").joinpath(REFERENCE_FILE).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = [ln.split(",") for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if rows and rows[0][0].strip() == "k":
        rows = rows[1:]
    ks = np.array([int(r[0]) for r in rows])
    p = np.array([float(r[1]) for r in rows])
    if np.any(np.diff(ks) != 1):
        raise DataError("reference PMF must list consecutive k values")
    out = np.zeros(ks[-1] + 1)
    out[ks] = p
    if abs(out.sum() - 1.0) > 1e-9:
        raise DataError(f"reference PMF sums to {out.sum()!r}")
    return out


def write_reference_pmf(path, pmf: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,probability\n")
        for k, p in enumerate(pmf):
            fh.write(f"{k},{p:.17g}\n")


@dataclass(frozen=True)
class StepFunctionParams:
    positions: np.ndarray
    heights: np.ndarray

    @property
    def k(self) -> int:
        return len(self.positions)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.positions, self.heights])

    @classmethod
    def from_vector(cls, k: int, x: np.ndarray) -> "StepFunctionParams":
        return cls(np.asarray(x[:k], dtype=float), np.asarray(x[k:], dtype=float))


def unpack(k: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x[:k], x[k:]


@dataclass
class ChangePointModel(NestedTarget):
    times: np.ndarray
    L: float
    lam: float = 3.0
    k_max: int = 30
    alpha: float = 1.0
    beta: float = 200.0
    k_min: int = field(default=0, init=False)

    def __post_init__(self):
        self.times = np.sort(np.asarray(self.times, dtype=float))
        if not self.L > 0:
            raise ValueError("L must be positive")
        if self.times.size and (self.times[0] < 0 or self.times[-1] > self.L):
            raise DataError("event times must lie in [0, L]")
        if min(self.lam, self.alpha, self.beta) <= 0:
            raise ValueError("lam, alpha and beta must be positive")
        ks = np.arange(self.k_max + 1)
        logw = ks * math.log(self.lam) - gammaln(ks + 1)
        self._log_pois = logw - logsumexp(logw)
        self._height_const = self.alpha * math.log(self.beta) - math.lgamma(self.alpha)

    @classmethod
    def coal(cls, **kwargs) -> "ChangePointModel":
        return cls(coal_times(), COAL_L, **kwargs)

    @property
    def n(self) -> int:
        return len(self.times)

    def dim(self, k: int) -> int:
        return 2 * k + 1

    def log_k_prior(self, k: int) -> float:
        return float(self._log_pois[k])

    def edges(self, s: np.ndarray) -> np.ndarray:
        return np.concatenate(([0.0], s, [self.L]))

    def counts(self, s: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.times, s, side="left")
        return np.diff(np.concatenate(([0], idx, [self.n])))

    def valid(self, k: int, x: np.ndarray) -> bool:
        if not self.in_support(k) or len(x) != 2 * k + 1:
            return False
        s, h = unpack(k, x)
        return bool(np.all(np.diff(self.edges(s)) > 0) and np.all(h > 0))

    def log_likelihood(self, k: int, x: np.ndarray) -> float:
        s, h = unpack(k, x)
        return float(np.dot(self.counts(s), np.log(h)) - np.dot(h, np.diff(self.edges(s))))

    def log_position_prior(self, k: int, s: np.ndarray) -> float:
        return float(gammaln(2 * k + 2) - (2 * k + 1) * math.log(self.L)
                     + np.sum(np.log(np.diff(self.edges(s)))))

    def log_height_prior(self, h: np.ndarray) -> float:
        return float(np.sum(self._height_const + (self.alpha - 1) * np.log(h) - self.beta * h))

    def log_prior(self, k: int, x: np.ndarray) -> float:
        s, h = unpack(k, x)
        return self.log_k_prior(k) + self.log_position_prior(k, s) + self.log_height_prior(h)

    def log_joint(self, k: int, x: np.ndarray) -> float:
        if not self.valid(k, x):
            return -math.inf
        return self.log_likelihood(k, x) + self.log_prior(k, x)

    def probe_point(self, k: int, rng: np.random.Generator) -> np.ndarray:
        return self.prior_sample(k, rng)

    def prior_sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        s = np.sort(rng.uniform(0, self.L, 2 * k + 1))[1::2]
        h = rng.gamma(self.alpha, 1.0 / self.beta, k + 1)
        return np.concatenate([s, h])

    def initial_params(self, k: int = 0) -> np.ndarray:
        """Evenly spaced change points with the data's average rate."""
        s = self.L * np.arange(1, k + 1) / (k + 1)
        rate = max(self.n, 1) / self.L
        return np.concatenate([s, np.full(k + 1, rate)])

    def param_kernel(self, k: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return param_update_sweep(k, x, self, rng)


def _log_ratio_factor(u_p: float) -> float:
    return math.log1p(-u_p) - math.log(u_p)


def split_heights(h: float, w: float, u_p: float) -> tuple[float, float]:
    lr = _log_ratio_factor(u_p)
    return h * math.exp(-(1.0 - w) * lr), h * math.exp(w * lr)


def merge_heights(h1: float, h2: float, w: float) -> tuple[float, float]:
    """Inverse of :func:`split_heights`: returns (h, u_p)."""
    return math.exp(w * math.log(h1) + (1.0 - w) * math.log(h2)), h1 / (h1 + h2)


def split_log_jacobian(h: float, h1: float, h2: float) -> float:
    return 2.0 * math.log(h1 + h2) - math.log(h)


class SplitMergeJump(JumpSpec):
    """``u = (s*, u_p)`` going up; ``u_rev = j*``, the merged step, going down."""

    def __init__(self, model: ChangePointModel):
        self.model = model

    def sample_up(self, k, x, rng):
        L = self.model.L
        edges = self.model.edges(x[:k])
        while True:
            s_new = rng.uniform(0.0, L)
            if np.min(np.abs(edges - s_new)) > COLLISION_TOL * L:
                break
        u_p = rng.random()
        while u_p == 0.0:
            u_p = rng.random()
        return np.array([s_new, u_p])

    def log_q_up(self, k, x, u):
        if 0.0 <= u[0] <= self.model.L and 0.0 < u[1] < 1.0:
            return -math.log(self.model.L)
        return -math.inf

    def forward(self, k, x, u):
        s, h = unpack(k, x)
        s_new, u_p = float(u[0]), float(u[1])
        edges = self.model.edges(s)
        j = int(np.searchsorted(s, s_new))
        w = (s_new - edges[j]) / (edges[j + 1] - edges[j])
        h1, h2 = split_heights(h[j], w, u_p)
        y = np.concatenate([s[:j], [s_new], s[j:], h[:j], [h1, h2], h[j + 1:]])
        return y, j, split_log_jacobian(h[j], h1, h2)

    def inverse(self, k, y, u_rev):
        j = int(u_rev)
        s, h = unpack(k + 1, y)
        edges = self.model.edges(s)
        s_new = s[j]
        w = (s_new - edges[j]) / (edges[j + 2] - edges[j])
        hm, u_p = merge_heights(h[j], h[j + 1], w)
        x = np.concatenate([s[:j], s[j + 1:], h[:j], [hm], h[j + 2:]])
        return x, np.array([s_new, u_p]), -split_log_jacobian(hm, h[j], h[j + 1])

    def sample_down(self, k, y, rng):
        return int(rng.integers(k + 1))

    def log_q_down(self, k, y, u_rev):
        return -math.log(k + 1) if 0 <= u_rev <= k else -math.inf


def split_merge_jump_spec(model: ChangePointModel) -> SplitMergeJump:
    return SplitMergeJump(model)


def mh_accept(log_ratio: float, rng: np.random.Generator) -> bool:
    u = rng.random()
    return u == 0.0 or math.log(u) <= log_ratio


def propose_height(k: int, x: np.ndarray, j: int, rng) -> tuple[np.ndarray, float]:
    """Log-uniform multiplicative move on height j; returns (x', log Hastings factor)."""
    step = rng.uniform(-0.5, 0.5)
    xn = x.copy()
    xn[k + j] = x[k + j] * math.exp(step)
    return xn, step


def propose_position(k: int, x: np.ndarray, i: int, L: float, rng) -> np.ndarray:
    """Change point i redrawn uniformly between its neighbours (symmetric)."""
    lo = x[i - 1] if i > 0 else 0.0
    hi = x[i + 1] if i + 1 < k else L
    xn = x.copy()
    xn[i] = rng.uniform(lo, hi)
    return xn


def param_update_sweep(k: int, x: np.ndarray, model: ChangePointModel,
                       rng: np.random.Generator) -> np.ndarray:
    """One MH update of a randomly chosen height or change point of model k."""
    if k == 0 or rng.random() < 0.5:
        xn, log_q = propose_height(k, x, int(rng.integers(k + 1)), rng)
    else:
        xn, log_q = propose_position(k, x, int(rng.integers(k)), model.L, rng), 0.0
    new = model.log_joint(k, xn)
    if new == -math.inf:
        return x
    return xn if mh_accept(new - model.log_joint(k, x) + log_q, rng) else x


# Bridge moves act on (y_{k+1}, j*): heights and change points of model k+1
# and the index of the step that merging would remove.

def _bridge_height(space: BridgeSpace, point: BridgePoint, rng):
    m = space.k + 1
    yn, log_q = propose_height(m, point.y, int(rng.integers(m + 1)), rng)
    return space.from_upper(yn, point.u_rev), log_q


def _bridge_position(space: BridgeSpace, point: BridgePoint, rng):
    m = space.k + 1
    yn = propose_position(m, point.y, int(rng.integers(m)), space.target.L, rng)
    return space.from_upper(yn, point.u_rev), 0.0


def _bridge_jstar(space: BridgeSpace, point: BridgePoint, rng):
    return space.from_upper(point.y, int(rng.integers(space.k + 1))), 0.0


class ChangePointBridgeKernel(MHSweepKernel):
    """Height, change-point and j* updates in random order, each a rho_lam MH step."""

    def __init__(self):
        super().__init__([_bridge_height, _bridge_position, _bridge_jstar])


def bridge_sweep(t: int, point: BridgePoint, schedule, space: BridgeSpace, rng,
                 direction: int = 1) -> BridgePoint:
    lam = float(schedule.weights(direction)[t])
    return ChangePointBridgeKernel().step(space, point, lam, rng)


def jstar_transition_matrix(space: BridgeSpace, y: np.ndarray, lam: float) -> np.ndarray:
    """Exact transition matrix of the j* update at fixed y."""
    m = space.k + 1
    logr = np.array([space.from_upper(y, j).log_rho(lam) for j in range(m)])
    P = np.zeros((m, m))
    for a in range(m):
        for b in range(m):
            if a != b:
                P[a, b] = min(1.0, math.exp(logr[b] - logr[a])) / m
        P[a, a] = 1.0 - P[a].sum()
    return P


def jstar_step(space: BridgeSpace, point: BridgePoint, lam: float, rng) -> BridgePoint:
    return inner_mh_step(point, lam, _bridge_jstar, space, rng)


def posterior_model_pmf(model: ChangePointModel, cells: int = 2000) -> np.ndarray:
    """Posterior PMF of k by quadrature over change-point positions.

    Heights integrate out analytically per segment, so the marginal
    likelihood of model k is a k-fold integral over ordered positions.  The
    window is cut into cells (event times are always cell edges) and each
    position is placed at a cell midpoint; the error is O(cells^-2).
    """
    t, L, a, b = model.times, model.L, model.alpha, model.beta
    edges = np.unique(np.concatenate([np.linspace(0.0, L, cells + 1), t]))
    mid = 0.5 * (edges[1:] + edges[:-1])
    log_w = np.log(np.diff(edges))
    m = len(mid)
    pts = np.concatenate([[0.0], mid, [L]])
    cum = np.searchsorted(t, pts, side="left").astype(float)
    cum[-1] = model.n
    D = pts[None, :] - pts[:, None]
    n = cum[None, :] - cum[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        seg = (np.log(D) + a * math.log(b) - gammaln(a) + gammaln(a + n)
               - (a + n) * np.log(b + D))
    seg[~(D > 0)] = -np.inf
    out = [seg[0, m + 1]]
    acc = seg[0, 1:m + 1] + log_w
    inner = seg[1:m + 1, 1:m + 1]
    for _ in range(1, model.k_max + 1):
        out.append(logsumexp(acc + seg[1:m + 1, m + 1]))
        acc = logsumexp(acc[:, None] + inner, axis=0) + log_w
    ks = np.arange(model.k_max + 1)
    log_ml = np.array(out) + gammaln(2 * ks + 2) - (2 * ks + 1) * math.log(L)
    log_post = log_ml + model._log_pois
    return np.exp(log_post - logsumexp(log_post))


# Compiled fast path ---------------------------------------------------------

FAST_SAMPLERS = {
    "nrj": (0, False), "rj": (0, True),
    "nrj2": (1, False), "rj2": (1, True),
    "nrj3": (2, False), "rj3": (2, True),
}


@dataclass(frozen=True)
class EngineConstants:
    const: np.ndarray
    gap: np.ndarray
    height_const: float


def engine_constants(model: ChangePointModel) -> EngineConstants:
    """Per-model constants: log pi(k, x) = const[k] + sum of per-step terms."""
    ks = np.arange(model.k_max + 1)
    logL = math.log(model.L)
    const = model._log_pois + gammaln(2 * ks + 2) - (2 * ks + 1) * logL
    k = ks[:-1]
    gap = const[1:] - np.log(k + 1) - const[:-1] + logL
    return EngineConstants(const, gap, model._height_const)


def _config(model: ChangePointModel, k: int, x: np.ndarray, cap: int):
    s, h = unpack(k, x)
    E = np.zeros(cap)
    H = np.zeros(cap)
    E[:k + 2] = model.edges(s)
    H[:k + 1] = h
    return E, H


def engine_log_joint(model: ChangePointModel, k: int, x: np.ndarray) -> float:
    from ._cp_engine import log_joint_config
    c = engine_constants(model)
    E, H = _config(model, k, x, model.k_max + 2)
    C = np.zeros(model.k_max + 2, dtype=np.int64)
    C[:k + 1] = model.counts(x[:k])
    return float(log_joint_config(E, H, C, k, c.const, c.height_const, model.alpha, model.beta))


def fast_chain(model: ChangePointModel, sampler: str, iterations: int, rng: np.random.Generator,
               tau: float = 0.4, T: int = 1, N: int = 1, k0: int = 0, x0: np.ndarray | None = None,
               nu0: int = 1, burn_in: int = 0, schedule=None):
    """Compiled chain for the change-point model; returns (ChainTrace, k, x).

    ``sampler`` is one of nrj, rj (vanilla), nrj2, rj2 (single bridge) or
    nrj3, rj3 (multiple bridges); reversible samplers use the symmetric
    model proposal.
    """
    from ..annealed import AnnealingSchedule
    from ..core import ChainTrace
    from ._cp_engine import run_chain_engine

    code, reversible = FAST_SAMPLERS[sampler]
    if schedule is None:
        schedule = AnnealingSchedule.linear(T)
    if x0 is None:
        x0 = model.initial_params(k0)
    if not model.valid(k0, x0):
        raise ValueError("invalid initial change-point configuration")
    c = engine_constants(model)
    cap = model.k_max + 2
    E0, H0 = _config(model, k0, x0, cap)
    n = iterations
    ks = np.empty(n + 1, dtype=np.int64)
    moves = np.empty(n + 1, dtype=np.int8)
    acc = np.empty(n + 1, dtype=np.bool_)
    nus = np.empty(n + 1, dtype=np.int8)
    E, H = np.zeros(cap), np.zeros(cap)
    C = np.zeros(cap, dtype=np.int64)
    nu = 0 if reversible else int(nu0)
    k = run_chain_engine(code, reversible, n, float(tau), max(int(N), 1),
                         np.ascontiguousarray(schedule.gammas),
                         np.ascontiguousarray(schedule.gammas[::-1]), int(k0), E0, H0, nu, rng,
                         model.times, float(model.L), c.const, c.gap, c.height_const,
                         float(model.alpha), float(model.beta), int(model.k_max),
                         ks, moves, acc, nus, E, H, C)
    x = np.concatenate([E[1:k + 1], H[:k + 1]])
    return ChainTrace(ks, moves, acc, nus, burn_in=burn_in), int(k), x
