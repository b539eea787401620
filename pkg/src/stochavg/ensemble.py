"""Monte Carlo ensembles, empirical action laws and the statistics built on them."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._kernels import kernels
from .core import DomainBox
from .sde import PathConfig, SdeSystem, integrate_batch

DIVERGENCE_LIMIT = 0.10
QUANTILE_GRID = 512
MOMENT_ORDERS = (1, 2, 4)
GROWTH_SLOPE = 0.1
MIN_EXITS = 50


class EnsembleWarning(UserWarning):
    pass


@dataclass
class Ensemble:
    times: np.ndarray
    snapshots: np.ndarray  # (len(times), N, n)
    diverged: np.ndarray
    master_seed: int
    tag: str
    space: str

    @property
    def N(self) -> int:
        return self.snapshots.shape[1]

    @property
    def diverged_count(self) -> int:
        return int(np.count_nonzero(self.diverged))

    @property
    def divergence_fraction(self) -> float:
        return self.diverged_count / self.N

    def time_index(self, tau: float) -> int:
        hit = np.nonzero(np.isclose(self.times, tau, rtol=0, atol=1e-9 * max(1.0, abs(tau))))[0]
        if len(hit) == 0:
            raise KeyError(f"no snapshot at tau={tau}")
        return int(hit[0])

    def actions(self, tau: float) -> np.ndarray:
        """Actions of the non-diverged paths at a snapshot time, in path order."""
        x = self.snapshots[self.time_index(tau)][~self.diverged]
        if self.space == "action":
            return np.real(x).astype(float)
        return 0.5 * np.abs(x) ** 2

    def path_ids(self) -> np.ndarray:
        return np.nonzero(~self.diverged)[0]


def run_ensemble(sys: SdeSystem, x0, N: int, cfg: PathConfig,
                 snapshot_times: Sequence[float], workers: int = 1) -> Ensemble:
    """``N`` independent paths; path ``i`` is seeded from ``(cfg.seed, i)``."""
    if N < 2:
        raise ValueError("ensemble needs N >= 2")
    res = integrate_batch(sys, x0, cfg, N, snapshot_times, workers=workers)
    ens = Ensemble(times=res.times, snapshots=res.snapshots, diverged=res.diverged,
                   master_seed=cfg.seed, tag=sys.tag, space=sys.space)
    if ens.divergence_fraction > DIVERGENCE_LIMIT:
        warnings.warn(f"{ens.diverged_count}/{N} paths diverged", EnsembleWarning, stacklevel=2)
    return ens


@dataclass
class EmpiricalDistribution:
    """Per-coordinate samples; ``sorted`` is ascending, ``raw`` keeps path order
    and ``path_ids`` ties each raw row to the path it came from."""

    raw: np.ndarray
    path_ids: np.ndarray
    sorted: np.ndarray = field(init=False)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float).reshape(len(self.path_ids), -1)
        self.sorted = np.sort(self.raw, axis=0)

    @property
    def size(self) -> int:
        return self.raw.shape[0]

    @property
    def n(self) -> int:
        return self.raw.shape[1]

    def split(self):
        """Two halves by path-id parity."""
        even = (self.path_ids % 2) == 0
        return (EmpiricalDistribution(self.raw[even], self.path_ids[even]),
                EmpiricalDistribution(self.raw[~even], self.path_ids[~even]))


def from_samples(samples) -> EmpiricalDistribution:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    return EmpiricalDistribution(samples, np.arange(samples.shape[0]))


def action_distribution(ens: Ensemble, tau: float) -> EmpiricalDistribution:
    return EmpiricalDistribution(ens.actions(tau), ens.path_ids())


@dataclass
class Distance:
    per_coordinate: np.ndarray

    @property
    def max(self) -> float:
        return float(np.max(self.per_coordinate))


def _quantiles(x: np.ndarray) -> np.ndarray:
    u = (np.arange(QUANTILE_GRID) + 0.5) / QUANTILE_GRID
    return np.quantile(x, u, method="inverted_cdf")


def wasserstein1(d1: EmpiricalDistribution, d2: EmpiricalDistribution) -> Distance:
    """Per-coordinate Wasserstein-1: exact for equal sizes, otherwise a
    512-point quantile coupling."""
    if d1.size == 0 or d2.size == 0:
        raise ValueError("empty distribution")
    if d1.n != d2.n:
        raise ValueError("dimension mismatch")
    out = np.empty(d1.n)
    for k in range(d1.n):
        a, b = d1.sorted[:, k], d2.sorted[:, k]
        if len(a) == len(b):
            out[k] = kernels.w1_sorted(np.ascontiguousarray(a), np.ascontiguousarray(b))
        else:
            out[k] = float(np.mean(np.abs(_quantiles(a) - _quantiles(b))))
    return Distance(out)


def wasserstein1_exponential(d: EmpiricalDistribution, means) -> Distance:
    """Exact Wasserstein-1 between each coordinate and ``Exp(mean_k)``."""
    means = np.broadcast_to(np.asarray(means, dtype=float), (d.n,))
    if np.any(d.sorted < 0):
        raise ValueError("exponential comparison needs non-negative samples")
    return Distance(np.array([kernels.w1_exponential(np.ascontiguousarray(d.sorted[:, k]), means[k])
                              for k in range(d.n)]))


def noise_floor(*dists: EmpiricalDistribution) -> np.ndarray:
    """Wasserstein-1 between the two path-parity halves, max over inputs."""
    floors = []
    for d in dists:
        a, b = d.split()
        m = min(a.size, b.size)
        # trim to equal sizes so the exact sorted coupling applies
        a = EmpiricalDistribution(a.raw[:m], a.path_ids[:m])
        b = EmpiricalDistribution(b.raw[:m], b.path_ids[:m])
        floors.append(wasserstein1(a, b).per_coordinate)
    return np.max(np.array(floors), axis=0)


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------

@dataclass
class MomentReport:
    times: np.ndarray
    orders: tuple
    moments: np.ndarray      # (len(orders), len(times))
    slopes: np.ndarray       # d log(moment) / d tau per order
    growth: bool


def moment_report(ens: Ensemble, orders: Sequence[int] = MOMENT_ORDERS,
                  quantity: str = "state") -> MomentReport:
    """``E|v|^m`` (or ``E|I|^m`` with ``quantity='action'``) per snapshot."""
    mom = np.empty((len(orders), len(ens.times)))
    for j, tau in enumerate(ens.times):
        if quantity == "action":
            r = np.linalg.norm(ens.actions(tau), axis=-1)
        else:
            x = ens.snapshots[j][~ens.diverged]
            r = np.linalg.norm(np.sqrt(2 * np.real(x)) if ens.space == "action" else x, axis=-1)
        for i, m in enumerate(orders):
            mom[i, j] = np.mean(r ** m)
    with np.errstate(divide="ignore"):
        logm = np.log(mom)
    slopes = np.zeros(len(orders))
    if len(ens.times) >= 2:
        for i in range(len(orders)):
            ok = np.isfinite(logm[i])
            if np.count_nonzero(ok) >= 2:
                slopes[i] = np.polyfit(ens.times[ok], logm[i, ok], 1)[0]
    return MomentReport(times=ens.times, orders=tuple(orders), moments=mom, slopes=slopes,
                        growth=bool(np.any(slopes > GROWTH_SLOPE)))


# ---------------------------------------------------------------------------
# exit times
# ---------------------------------------------------------------------------

class _ExitObserver:
    def __init__(self, box: DomainBox, space: str):
        self.radii = np.ascontiguousarray(box.C, dtype=float)
        self.space = space

    def start(self, N):
        return {"step": np.full(N, -1, dtype=np.int64), "open": N}

    def update(self, st, x, dead, k) -> bool:
        absv = np.abs(x) if self.space == "complex" else np.sqrt(2.0 * np.maximum(np.real(x), 0))
        st["open"] -= kernels.first_exit(np.ascontiguousarray(absv), self.radii, st["step"], k)
        return st["open"] <= 0


@dataclass
class ExitReport:
    lambdas: np.ndarray
    cdf: np.ndarray
    exit_times: np.ndarray   # inf where the path never left the box
    exits: int
    exponent: Optional[float]
    constant: Optional[float]
    max_ratio_sqrt: Optional[float]  # max over the fit window of P / sqrt(lambda)
    fit_window: tuple
    reliable: bool
    note: str = ""


def exit_time_stats(sys: SdeSystem, x0, box: DomainBox, N: int, cfg: PathConfig,
                    lambdas: Optional[np.ndarray] = None, window=(0.01, 0.5)) -> ExitReport:
    """First exit from the polydisc, detected on the time grid.

    Fits ``log P(theta <= lambda)`` against ``log lambda`` over the lambdas
    where ``window[0] <= P <= window[1]``.
    """
    x0 = np.asarray(x0)
    r0 = np.abs(x0) if sys.space == "complex" else np.sqrt(2.0 * np.asarray(x0, dtype=float))
    if np.any(r0 > box.C):
        raise ValueError("initial state lies outside the box")
    obs = _ExitObserver(box, sys.space)
    res = integrate_batch(sys, x0, cfg, N, [0.0], observer=obs)
    step = res.extra["observer"]["step"]
    theta = np.where(step >= 0, step * cfg.dtau, np.inf)
    if lambdas is None:
        lambdas = np.geomspace(cfg.dtau, cfg.T, 80)
    lambdas = np.asarray(lambdas, dtype=float)
    th = np.sort(theta)
    cdf = np.searchsorted(th, lambdas * (1 + 1e-12), side="right") / N
    exits = int(np.count_nonzero(np.isfinite(theta)))
    sel = (cdf >= window[0]) & (cdf <= window[1])
    exponent = constant = ratio = None
    note = ""
    reliable = exits >= MIN_EXITS and np.count_nonzero(sel) >= 3
    if exits == 0:
        note = "no exits; fit skipped"
    elif np.count_nonzero(sel) < 2:
        note = "fewer than two lambdas inside the fit window; fit skipped"
    else:
        p, c = np.polyfit(np.log(lambdas[sel]), np.log(cdf[sel]), 1)
        exponent, constant = float(p), float(np.exp(c))
        ratio = float(np.max(cdf[sel] / np.sqrt(lambdas[sel])))
        if exits < MIN_EXITS:
            note = f"only {exits} exits; fit unreliable"
    if note and exits < MIN_EXITS:
        warnings.warn(note, EnsembleWarning, stacklevel=2)
    return ExitReport(lambdas=lambdas, cdf=cdf, exit_times=theta, exits=exits, exponent=exponent,
                      constant=constant, max_ratio_sqrt=ratio, fit_window=tuple(window),
                      reliable=bool(reliable), note=note)


# ---------------------------------------------------------------------------
# stationary law
# ---------------------------------------------------------------------------

@dataclass
class StationaryEstimate:
    distribution: EmpiricalDistribution
    halves_distance: np.ndarray
    floor: np.ndarray
    stationary: bool
    degenerate: bool


def stationary_estimate(sys: SdeSystem, x0, burn_in: float, T: float, N: int,
                        cfg: PathConfig, samples_per_path: int = 8) -> StationaryEstimate:
    """Pool action snapshots taken on ``[burn_in, T]`` into one law.

    Warns when the first and second halves of the window differ by more than
    three noise floors, or when the pooled law is a point mass.
    """
    if not burn_in < T:
        raise ValueError("burn_in must be smaller than T")
    cfg = PathConfig(dtau=cfg.dtau, T=T, seed=cfg.seed, scheme=cfg.scheme)
    times = np.rint(np.linspace(burn_in, T, samples_per_path) / cfg.dtau) * cfg.dtau
    ens = run_ensemble(sys, x0, N, cfg, times)
    ids = ens.path_ids()
    blocks = [ens.actions(t) for t in ens.times]
    half = len(blocks) // 2
    pooled = EmpiricalDistribution(np.concatenate(blocks), np.tile(ids, len(blocks)))
    first = EmpiricalDistribution(np.concatenate(blocks[:half]), np.tile(ids, half))
    second = EmpiricalDistribution(np.concatenate(blocks[half:2 * half]), np.tile(ids, half))
    dist = wasserstein1(first, second).per_coordinate
    floor = noise_floor(first, second)
    spread = pooled.sorted[-1] - pooled.sorted[0]
    degenerate = bool(np.all(spread <= 1e-12 * (1.0 + np.abs(pooled.sorted[-1]))))
    stationary = bool(np.all(dist <= 3 * floor)) and not degenerate
    if not stationary:
        why = "point mass" if degenerate else "halves differ by more than 3 noise floors"
        warnings.warn(f"stationary estimate unreliable: {why}", EnsembleWarning, stacklevel=2)
    return StationaryEstimate(distribution=pooled, halves_distance=dist, floor=floor,
                              stationary=stationary, degenerate=degenerate)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def atomic_write(path: str, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def ensemble_csv(ens: Ensemble) -> str:
    """Rows ``path_id, tau, coordinate, value`` with the action as value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path_id", "tau", "coordinate", "value"])
    ids = ens.path_ids()
    for tau in ens.times:
        I = ens.actions(tau)
        for row, pid in enumerate(ids):
            for k in range(I.shape[1]):
                w.writerow([int(pid), _fmt(tau), k, _fmt(I[row, k])])
    return buf.getvalue()


def exit_csv(rep: ExitReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "cdf"])
    for lam, c in zip(rep.lambdas, rep.cdf):
        w.writerow([_fmt(lam), _fmt(c)])
    return buf.getvalue()


def to_json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, complex):
            return [o.real, o.imag]
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"
