"""Desk-scale experiment definitions, budget matching and CSV persistence.

An experiment is a grid of cells (sampler x sigma x phi x K_max x T x N),
each run for a number of replicates.  Replicate r of cell c draws from
``SeedSequence(seed, spawn_key=(c, r))``, so results do not depend on the
order or the process in which replicates run.
"""

from __future__ import annotations

import configparser
import csv
import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .annealed import AnnealedNRJ, AnnealedRJ, AnnealingSchedule
from .core import ConfigurationError, RunConfig, TransDimState, run_chain
from .kernels import VanillaNRJ, VanillaRJ, simulate_ideal_k
from .multipath import MultiPathNRJ, MultiPathRJ

EXPERIMENTS = ("table1", "fig3", "fig4a", "fig4b", "limits", "custom")
TARGETS = ("toy", "changepoint")
SAMPLERS = ("ideal_nrj", "ideal_rj", "ideal_rj_informed", "nrj", "rj", "rj_informed",
            "nrj2", "rj2", "nrj3", "rj3")
VANILLA = ("nrj", "rj", "rj_informed")
IDEAL = {"ideal_nrj": "nrj", "ideal_rj": "rj_unif", "ideal_rj_informed": "rj_informed"}
TOY_TAU = 0.5
CHANGEPOINT_TAU = 0.4


def match_budget(I: float, tau: float, T: float) -> tuple[float, float]:
    """Vanilla iteration count and tau costing the same as a bridge sampler run.

    Each bridge switch counts as 4.5 T vanilla switches.
    """
    if I < 1 or T < 1:
        raise ConfigurationError("I and T must be at least 1")
    if not 0 <= tau < 1:
        raise ConfigurationError(f"tau={tau} leaves no switches; budget undefined")
    total = I * tau + I * (1 - tau) * 4.5 * T
    return total, I * tau / total


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


@dataclass(frozen=True)
class Cell:
    index: int
    sampler: str
    sigma: float
    phi: float
    k_max: int
    T: int
    N: int


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: target, sampler list, grids and run lengths.

    ``phi = 1`` selects the uniform model PMF on the toy target.  For the
    change-point target the sigma, phi and K_max grids are ignored.
    """

    name: str
    target: str = "toy"
    samplers: tuple[str, ...] = ("nrj", "rj")
    sigma: tuple[float, ...] = (1.0,)
    phi: tuple[float, ...] = (2.0,)
    k_max: tuple[int, ...] = (11,)
    T: tuple[int, ...] = (1,)
    N: tuple[int, ...] = (1,)
    replicates: int = 20
    iterations: int = 100_000
    burn_in: int = 1_000
    tau: float = TOY_TAU
    seed: int = 1
    output_dir: str = "results"
    budget_match: bool = False
    workers: int = 1
    data: str | None = None
    L: float | None = None
    reference: str | None = None
    limits_n: int = 10_000
    limits_t: float = 1.0
    limits_z0: float = -2.0
    limits_dt: float = 1e-3
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.name!r}; choose from {EXPERIMENTS}")
        if self.target not in TARGETS:
            raise ConfigurationError(f"unknown target {self.target!r}")
        for s in self.samplers:
            if s not in SAMPLERS:
                raise ConfigurationError(f"unknown sampler {s!r}; choose from {SAMPLERS}")
        for grid in ("samplers", "sigma", "phi", "k_max", "T", "N"):
            if len(getattr(self, grid)) == 0:
                raise ConfigurationError(f"grid {grid!r} is empty")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be at least 1")
        if self.name != "limits" and not 0 <= self.burn_in < self.iterations:
            raise ConfigurationError("need 0 <= burn_in < iterations")
        if not 0 <= self.tau <= 1:
            raise ConfigurationError(f"tau={self.tau} outside [0, 1]")
        if min(self.T) < 1 or min(self.N) < 1:
            raise ConfigurationError("T and N must be at least 1")
        if self.target == "toy" and any(s <= 0 for s in self.sigma):
            raise ConfigurationError("sigma must be positive")
        if self.target == "toy" and any(p < 1 for p in self.phi):
            raise ConfigurationError("phi must be at least 1")

    @classmethod
    def from_ini(cls, path) -> "ExperimentSpec":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"spec file not found: {path}")
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.read(path, encoding="utf-8")
        if "experiment" not in cp:
            raise ConfigurationError(f"{path}: missing [experiment] section")
        e, g = cp["experiment"], (cp["grid"] if "grid" in cp else {})
        kw: dict = {"name": e.get("name", "custom"), "source": str(path)}
        conv = {"target": str, "replicates": int, "iterations": int, "burn_in": int,
                "tau": float, "seed": int, "output_dir": str, "workers": int, "data": str,
                "L": float, "reference": str, "limits_n": int, "limits_t": float,
                "limits_z0": float, "limits_dt": float}
        for key, fn in conv.items():
            if key in e:
                kw[key] = fn(e[key])
        if "budget_match" in e:
            kw["budget_match"] = e.getboolean("budget_match")
        if "samplers" in e:
            kw["samplers"] = tuple(s.strip() for s in e["samplers"].split(",") if s.strip())
        for key, fn in (("sigma", _floats), ("phi", _floats), ("k_max", _ints), ("T", _ints),
                        ("N", _ints)):
            if key in g:
                kw[key] = fn(g[key])
        if kw.get("output_dir") and not Path(kw["output_dir"]).is_absolute():
            kw["output_dir"] = str(path.parent / kw["output_dir"])
        for key in ("data", "reference"):
            if kw.get(key) and not Path(kw[key]).is_absolute():
                kw[key] = str(path.parent / kw[key])
        if kw.get("target") == "changepoint" and "tau" not in e:
            kw["tau"] = CHANGEPOINT_TAU
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    def cells(self) -> list[Cell]:
        out = []
        if self.target == "changepoint":
            grid = itertools.product(self.samplers, (math.nan,), (math.nan,), (30,), self.T, self.N)
        else:
            grid = itertools.product(self.samplers, self.sigma, self.phi, self.k_max, self.T, self.N)
        for i, (s, sig, phi, K, T, N) in enumerate(grid):
            out.append(Cell(i, s, sig, phi, K, T, N))
        return out

    def check_inputs(self) -> None:
        """Fail before sampling if a referenced file is missing."""
        for key in ("data", "reference"):
            p = getattr(self, key)
            if p is not None and not Path(p).is_file():
                raise ConfigurationError(f"{key} file not found: {p}")
        if self.target == "changepoint" and self.data is not None and self.L is None:
            raise ConfigurationError("custom event data needs the observation length L")


@dataclass(frozen=True)
class ReplicateResult:
    cell: int
    sampler: str
    sigma: float
    phi: float
    k_max: int
    T: int
    N: int
    replicate: int
    iterations: int
    ess: float
    iat: float
    tv: float
    acceptance_rate: float
    flags: str
    wall_clock: float = field(default=0.0, compare=False)


RESULT_FIELDS = ["cell", "sampler", "sigma", "phi", "k_max", "T", "N", "replicate",
                 "iterations", "ess", "iat", "tv", "acceptance_rate", "flags"]


def replicate_rng(seed: int, cell: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(cell, replicate)))


# Targets -----------------------------------------------------------------

def toy_pmf(phi: float, k_max: int):
    from .targets.toy import phi_pmf, uniform_pmf
    return uniform_pmf(k_max) if phi == 1 else phi_pmf(phi, k_max)


def changepoint_model(spec: ExperimentSpec):
    from .targets.changepoint import ChangePointModel, load_event_data
    if spec.data is None:
        return ChangePointModel.coal()
    return ChangePointModel(load_event_data(spec.data, spec.L), spec.L)


def reference_pmf(spec: ExperimentSpec, cell: Cell) -> np.ndarray:
    if spec.target == "toy":
        return toy_pmf(cell.phi, cell.k_max).probs
    from .targets.changepoint import read_reference_pmf
    return read_reference_pmf(spec.reference)


# Runners -----------------------------------------------------------------

def _ideal_result(spec, cell, rng, ref, k_min):
    lp = np.log(ref)
    k0 = k_min + int(np.argmax(ref))
    ks, _ = simulate_ideal_k(lp, IDEAL[cell.sampler], spec.iterations, rng, k0, 1, k_min=k_min)
    path = ks[0, spec.burn_in + 1:]
    est = dg.iat(path)
    pmf = dg.empirical_pmf(path, k_min, k_min + len(ref) - 1)
    moves = np.diff(ks[0, spec.burn_in:])
    return spec.iterations, est, dg.tv_distance(pmf, ref), float(np.mean(moves != 0))


def _toy_kernel(cell: Cell, target, jump):
    from .targets.toy import ToyBridgeKernel
    pk = target.param_kernel
    s = cell.sampler
    if s == "nrj":
        return VanillaNRJ(target, jump, pk)
    if s in ("rj", "rj_informed"):
        return VanillaRJ(target, jump, pk, g="symmetric" if s == "rj" else "informed")
    sched = AnnealingSchedule.linear(cell.T)
    bk = ToyBridgeKernel(target.sigma)
    if s == "nrj2":
        return AnnealedNRJ(target, jump, sched, bk, pk)
    if s == "rj2":
        return AnnealedRJ(target, jump, sched, bk, pk)
    if s == "nrj3":
        return MultiPathNRJ(target, jump, sched, bk, cell.N, pk)
    return MultiPathRJ(target, jump, sched, bk, cell.N, pk)


def _toy_trace(spec, cell, rng):
    from .targets.toy import ToyJump, ToyTarget
    target = ToyTarget(toy_pmf(cell.phi, cell.k_max), cell.sigma)
    kernel = _toy_kernel(cell, target, ToyJump(cell.sigma))
    k0 = target.pmf.mode
    state = TransDimState(k0, target.conditional_sample(k0, rng), 1)
    cfg = RunConfig(spec.iterations, spec.burn_in, spec.tau, spec.seed, cell.sampler, cell.T, cell.N)
    return run_chain(cfg, target, kernel, state, rng)


def _changepoint_trace(spec, cell, rng, model):
    from .targets.changepoint import fast_chain
    iterations, burn_in, tau = spec.iterations, spec.burn_in, spec.tau
    if spec.budget_match and cell.sampler in ("nrj", "rj"):
        total, tau = match_budget(spec.iterations, spec.tau, max(spec.T))
        iterations = int(round(total))
        burn_in = int(round(spec.burn_in * iterations / spec.iterations))
    k0 = 3
    trace, _, _ = fast_chain(model, cell.sampler, iterations, rng, tau=tau, T=cell.T, N=cell.N,
                             k0=k0, x0=model.initial_params(k0), burn_in=burn_in)
    return trace


def run_replicate(spec: ExperimentSpec, cell: Cell, rep: int) -> ReplicateResult:
    start = time.perf_counter()
    rng = replicate_rng(spec.seed, cell.index, rep)
    ref = reference_pmf(spec, cell)
    k_min = 1 if spec.target == "toy" else 0
    if cell.sampler in IDEAL:
        iters, est, tv, acc = _ideal_result(spec, cell, rng, ref, k_min)
    else:
        if spec.target == "toy":
            trace = _toy_trace(spec, cell, rng)
        else:
            if cell.sampler == "rj_informed":
                raise ConfigurationError("rj_informed is only available on the toy target")
            trace = _changepoint_trace(spec, cell, rng, changepoint_model(spec))
        iters = trace.iterations
        est = dg.ess_per_switch_iteration(trace)
        pmf = dg.empirical_pmf(trace.k[trace.post_burn_in()], k_min, k_min + len(ref) - 1)
        tv = dg.tv_distance(pmf, ref)
        acc = trace.acceptance_rate()
    flags = "|".join(n for n, on in (("degenerate", est.degenerate), ("antithetic", est.antithetic),
                                     ("periodic", est.periodic > 0)) if on)
    return ReplicateResult(cell.index, cell.sampler, cell.sigma, cell.phi, cell.k_max, cell.T,
                           cell.N, rep, iters, est.ess, est.value, tv, acc, flags,
                           time.perf_counter() - start)


def _task(args):
    spec, cell, rep = args
    return run_replicate(spec, cell, rep)


def run_grid(spec: ExperimentSpec) -> list[ReplicateResult]:
    spec.check_inputs()
    tasks = [(spec, c, r) for c in spec.cells() for r in range(spec.replicates)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    return sorted(results, key=lambda r: (r.cell, r.replicate))


# Aggregation and persistence ----------------------------------------------

def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = x[~np.isnan(x)]
    if len(x) == 0:
        return math.nan, math.nan
    se = float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
    return float(np.mean(x)), se


SUMMARY_FIELDS = ["cell", "sampler", "sigma", "phi", "k_max", "T", "N", "replicates",
                  "ess_mean", "ess_se", "tv_mean", "tv_se", "acceptance_mean", "acceptance_se",
                  "relative_tv"]


def summarize(results: list[ReplicateResult]) -> list[dict]:
    """Per-cell means and standard errors.

    ``relative_tv`` compares mean TV with the ideal NRJ cell at the same grid
    point, when the experiment includes one.
    """
    rows = []
    for cell, group in itertools.groupby(sorted(results, key=lambda r: r.cell), key=lambda r: r.cell):
        group = list(group)
        g0 = group[0]
        row = {"cell": cell, "sampler": g0.sampler, "sigma": g0.sigma, "phi": g0.phi,
               "k_max": g0.k_max, "T": g0.T, "N": g0.N, "replicates": len(group)}
        for name, attr in (("ess", "ess"), ("tv", "tv"), ("acceptance", "acceptance_rate")):
            m, se = _mean_se(np.array([getattr(r, attr) for r in group], dtype=float))
            row[f"{name}_mean"], row[f"{name}_se"] = m, se
        rows.append(row)
    for row in rows:
        ideal = [r for r in rows if r["sampler"] == "ideal_nrj"
                 and all(_same(r[k], row[k]) for k in ("sigma", "phi", "k_max"))]
        row["relative_tv"] = math.nan
        if ideal and ideal[0]["tv_mean"] > 0:
            row["relative_tv"] = dg.relative_tv_difference(row["tv_mean"], ideal[0]["tv_mean"])
    return rows


def _same(a, b) -> bool:
    return (isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b)) or a == b


def write_rows(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([fmt(row[f]) for f in fields])


def write_results(spec: ExperimentSpec, results: list[ReplicateResult]) -> dict[str, Path]:
    """Replicate, summary and timing CSVs; the first two are byte-reproducible."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"results": out / f"{spec.name}_replicates.csv",
             "summary": out / f"{spec.name}_summary.csv",
             "timing": out / f"{spec.name}_timing.csv"}
    write_rows(paths["results"], RESULT_FIELDS, [asdict(r) for r in results])
    write_rows(paths["summary"], SUMMARY_FIELDS, summarize(results))
    write_rows(paths["timing"], ["cell", "replicate", "wall_clock"], [asdict(r) for r in results])
    return paths


def read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# Limits ------------------------------------------------------------------

LIMIT_FIELDS = ["n", "replicates", "t", "z0", "tau", "ks_rj_langevin", "ks_nrj_zigzag",
                "ks_rj_swapped", "ks_nrj_swapped"]


def run_limits(spec: ExperimentSpec) -> dict[str, Path]:
    from .limits import compare_limits
    rng = replicate_rng(spec.seed, 0, 0)
    cmp = compare_limits(spec.limits_n, spec.replicates, rng, z0=spec.limits_z0,
                         tau=spec.tau, t=spec.limits_t, dt=spec.limits_dt)
    row = {"n": spec.limits_n, "replicates": spec.replicates, "t": spec.limits_t,
           "z0": spec.limits_z0, "tau": spec.tau, **asdict(cmp)}
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{spec.name}_ks.csv"
    write_rows(path, LIMIT_FIELDS, [row])
    return {"ks": path}


def run_experiment(spec: ExperimentSpec) -> dict[str, Path]:
    spec.check_inputs()
    if spec.name == "limits":
        return run_limits(spec)
    return write_results(spec, run_grid(spec))


def with_overrides(spec: ExperimentSpec, **kw) -> ExperimentSpec:
    return replace(spec, **kw)


__all__ = ["Cell", "ExperimentSpec", "ReplicateResult", "match_budget",
           "run_experiment", "run_grid", "run_replicate", "summarize", "write_results"]
