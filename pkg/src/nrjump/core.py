"""State types, the nested-target interface and the generic chain loop."""

from __future__ import annotations

import csv
import enum
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

PMF_TOLERANCE = 1e-10


class ConfigurationError(ValueError):
    """Raised when a run configuration or initial state is inconsistent."""


class MoveKind(enum.IntEnum):
    INIT = 0
    PARAM_UPDATE = 1
    SWITCH_UP = 2
    SWITCH_DOWN = 3

    @property
    def label(self) -> str:
        return _MOVE_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "MoveKind":
        try:
            return _LABEL_MOVES[label]
        except KeyError:
            raise ValueError(f"unknown move kind {label!r}") from None


_MOVE_LABELS = {
    MoveKind.INIT: "init",
    MoveKind.PARAM_UPDATE: "param_update",
    MoveKind.SWITCH_UP: "switch_up",
    MoveKind.SWITCH_DOWN: "switch_down",
}
_LABEL_MOVES = {v: k for k, v in _MOVE_LABELS.items()}


@dataclass(frozen=True)
class TransDimState:
    """Model index ``k``, parameters ``x`` of length d_k and direction ``nu``.

    Reversible samplers carry ``nu = 0``.
    """

    k: int
    x: np.ndarray
    nu: int = 1

    def with_nu(self, nu: int) -> "TransDimState":
        return TransDimState(self.k, self.x, nu)


def make_rng(seed) -> np.random.Generator:
    """Seeded generator; accepts an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def replicate_seeds(seed: int, *key: int, count: int) -> list[np.random.SeedSequence]:
    """Independent, reproducible child seeds addressed by ``key``."""
    root = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(v) for v in key))
    return root.spawn(count)


class NestedTarget(ABC):
    """Unnormalized joint density over a totally ordered family of models."""

    k_min: int
    k_max: int

    @abstractmethod
    def dim(self, k: int) -> int:
        """Parameter dimension d_k."""

    @abstractmethod
    def log_joint(self, k: int, x: np.ndarray) -> float:
        """Unnormalized log pi(k, x); ``-inf`` outside the support."""

    def log_model_pmf(self, k: int) -> float:
        """Log marginal model probability, when known."""
        raise NotImplementedError

    def conditional_sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """Exact draw from pi(. | k), when available."""
        raise NotImplementedError

    @property
    def has_model_pmf(self) -> bool:
        return type(self).log_model_pmf is not NestedTarget.log_model_pmf

    @property
    def has_conditional_sampler(self) -> bool:
        return type(self).conditional_sample is not NestedTarget.conditional_sample

    def in_support(self, k: int) -> bool:
        return self.k_min <= k <= self.k_max

    def model_pmf(self) -> np.ndarray:
        """Vector of pi(k) for k = k_min..k_max."""
        return np.exp([self.log_model_pmf(k) for k in range(self.k_min, self.k_max + 1)])

    def probe_point(self, k: int, rng: np.random.Generator) -> np.ndarray:
        """A point at which ``log_joint`` should be finite; used by validation."""
        if self.has_conditional_sampler:
            return self.conditional_sample(k, rng)
        return rng.standard_normal(self.dim(k))


@dataclass
class ValidationReport:
    pmf_residual: float | None = None
    nested: bool = True
    finite_at_probes: bool = True
    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings


def validate_target(target: NestedTarget, probes: int = 3, seed: int = 0) -> ValidationReport:
    """Collect structural findings about ``target`` without raising."""
    report = ValidationReport()
    ks = range(target.k_min, target.k_max + 1)
    if target.has_model_pmf:
        try:
            total = float(np.sum(target.model_pmf()))
            report.pmf_residual = abs(total - 1.0)
            if report.pmf_residual > PMF_TOLERANCE:
                report.findings.append(f"model PMF sums to {total!r}")
        except Exception as exc:  # noqa: BLE001 - report, never abort
            report.findings.append(f"log_model_pmf failed: {exc}")
    dims = []
    for k in ks:
        try:
            dims.append(target.dim(k))
        except Exception as exc:  # noqa: BLE001
            report.findings.append(f"dim({k}) failed: {exc}")
            dims.append(None)
    for k, (a, b) in zip(ks, zip(dims, dims[1:])):
        if a is not None and b is not None and b < a:
            report.nested = False
            report.findings.append(f"nestedness violated: d_{k + 1}={b} < d_{k}={a}")
    rng = make_rng(seed)
    for k in ks:
        for _ in range(probes):
            try:
                value = target.log_joint(k, target.probe_point(k, rng))
            except Exception as exc:  # noqa: BLE001
                value = np.nan
                report.findings.append(f"log_joint({k}, .) raised {exc}")
            if not np.isfinite(value):
                report.finite_at_probes = False
                report.findings.append(f"log_joint({k}, .) not finite at a probe point")
                break
    return report


@dataclass(frozen=True)
class RunConfig:
    iterations: int
    burn_in: int = 0
    tau: float = 0.0
    seed: int = 0
    sampler: str = "nrj"
    T: int = 1
    N: int = 1
    param_stride: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0:
            raise ConfigurationError("iterations and burn_in must be nonnegative")
        if self.iterations > 0 and self.burn_in >= self.iterations:
            raise ConfigurationError("burn_in must be smaller than iterations")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError(f"tau={self.tau} outside [0, 1]")
        if self.T < 1 or self.N < 1:
            raise ConfigurationError("T and N must be at least 1")


@dataclass(frozen=True)
class StepResult:
    state: TransDimState
    move: MoveKind
    accepted: bool


class Kernel(Protocol):
    """One outer iteration: parameter update with probability tau, else a switch."""

    reversible: bool

    def step(self, state: TransDimState, tau: float, rng: np.random.Generator) -> StepResult: ...


@dataclass
class ChainTrace:
    """Per-iteration records; index 0 of the path arrays is the initial state."""

    k: np.ndarray
    move: np.ndarray
    accepted: np.ndarray
    nu: np.ndarray
    burn_in: int = 0
    params: dict[int, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.k) - 1

    @property
    def iterations(self) -> int:
        return len(self)

    @property
    def initial_k(self) -> int:
        return int(self.k[0])

    def switch_mask(self) -> np.ndarray:
        move = self.move
        return (move == MoveKind.SWITCH_UP) | (move == MoveKind.SWITCH_DOWN)

    def post_burn_in(self) -> slice:
        return slice(self.burn_in + 1, None)

    def switch_k_path(self) -> np.ndarray:
        """k after each post-burn-in switch-proposal iteration."""
        sl = self.post_burn_in()
        return self.k[sl][self.switch_mask()[sl]]

    def acceptance_rate(self) -> float:
        sl = self.post_burn_in()
        mask = self.switch_mask()[sl]
        if not mask.any():
            return float("nan")
        return float(self.accepted[sl][mask].mean())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "k", "move", "accepted", "nu"])
            for i in range(len(self.k)):
                writer.writerow([i, int(self.k[i]), MoveKind(int(self.move[i])).label,
                                 int(self.accepted[i]), int(self.nu[i])])

    @classmethod
    def from_csv(cls, path, burn_in: int = 0) -> "ChainTrace":
        ks, moves, acc, nus = [], [], [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"iter", "k", "move", "accepted", "nu"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"trace CSV missing columns: {sorted(missing)}")
            for line, row in enumerate(reader, start=2):
                try:
                    ks.append(int(row["k"]))
                    moves.append(MoveKind.from_label(row["move"]))
                    acc.append(bool(int(row["accepted"])))
                    nus.append(int(row["nu"]))
                except (TypeError, ValueError) as exc:
                    raise ValueError(f"trace CSV line {line}: {exc}") from None
        if not ks:
            raise ValueError("trace CSV has no records")
        return cls(np.array(ks, dtype=np.int64), np.array(moves, dtype=np.int8),
                   np.array(acc, dtype=bool), np.array(nus, dtype=np.int8), burn_in=burn_in)


def check_state(target: NestedTarget, state: TransDimState) -> None:
    if not target.in_support(state.k):
        raise ConfigurationError(f"initial k={state.k} outside [{target.k_min}, {target.k_max}]")
    if len(state.x) != target.dim(state.k):
        raise ConfigurationError(
            f"initial parameters have length {len(state.x)}, model {state.k} needs {target.dim(state.k)}")
    if state.nu not in (-1, 0, 1):
        raise ConfigurationError(f"direction {state.nu} not in {{-1, 0, 1}}")


def run_chain(config: RunConfig, target: NestedTarget, kernel: Kernel,
              initial: TransDimState, rng: np.random.Generator | None = None,
              callback: Callable[[int, TransDimState], None] | None = None) -> ChainTrace:
    """Advance ``kernel`` for ``config.iterations`` iterations from ``initial``."""
    check_state(target, initial)
    if rng is None:
        rng = make_rng(config.seed)
    if kernel.reversible:
        initial = initial.with_nu(0)
    elif initial.nu == 0:
        raise ConfigurationError("non-reversible kernels need an initial direction of +1 or -1")
    n = config.iterations
    ks = np.empty(n + 1, dtype=np.int64)
    moves = np.empty(n + 1, dtype=np.int8)
    accepted = np.zeros(n + 1, dtype=bool)
    nus = np.empty(n + 1, dtype=np.int8)
    ks[0], moves[0], nus[0] = initial.k, MoveKind.INIT, initial.nu
    params = {}
    stride = config.param_stride
    if stride:
        params[0] = np.array(initial.x)
    state = initial
    for i in range(1, n + 1):
        res = kernel.step(state, config.tau, rng)
        state = res.state
        ks[i], moves[i], accepted[i], nus[i] = state.k, res.move, res.accepted, state.nu
        if stride and i % stride == 0:
            params[i] = np.array(state.x)
        if callback is not None:
            callback(i, state)
    return ChainTrace(ks, moves, accepted, nus, burn_in=config.burn_in, params=params)
