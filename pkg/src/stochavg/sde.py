"""Wiener increments and the three steppers (Euler, rotation splitting,
full-truncation Euler on the action orthant)."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._kernels import kernels
from .core import IntegrableHamiltonian, unperturbed_flow

NOISE_CHUNK = 512


@dataclass(frozen=True)
class SdeSystem:
    """``dx = drift(x) dtau + dispersion(x) dbeta`` (+ optional stiff rotation).

    ``dispersion`` returns ``(..., n, m)``.  ``dispersion_matrix`` may hold the
    same matrix for constant dispersions, which skips the per-step callback.
    """

    space: str  # "complex" or "action"
    n: int
    m: int
    drift: Callable[[np.ndarray], np.ndarray]
    dispersion: Callable[[np.ndarray], np.ndarray]
    noise_kind: str = "complex"
    H: Optional[IntegrableHamiltonian] = None
    eps: Optional[float] = None
    dispersion_matrix: Optional[np.ndarray] = None
    tag: str = ""

    def __post_init__(self):
        if self.space not in ("complex", "action"):
            raise ValueError(f"unknown state space {self.space!r}")
        if self.noise_kind not in ("complex", "real"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.H is not None:
            if self.space != "complex":
                raise ValueError("a stiff part needs the complex state space")
            if self.eps is None or not self.eps > 0:
                raise ValueError("eps must be positive")

    @property
    def stiff(self) -> bool:
        return self.H is not None

    @property
    def dtype(self):
        return np.complex128 if self.space == "complex" else np.float64

    def noise(self, x, dbeta):
        if self.dispersion_matrix is not None:
            return dbeta @ self.dispersion_matrix.T
        return np.einsum("...km,...m->...k", self.dispersion(x), dbeta)

    def stiff_drift(self, x):
        freq = self.H.gradH(0.5 * np.abs(x) ** 2)
        return 1j / self.eps * freq * x


@dataclass(frozen=True)
class PathConfig:
    dtau: float
    T: float
    seed: int = 0
    scheme: str = "auto"  # auto | euler | splitting

    def __post_init__(self):
        if not (self.dtau > 0 and self.T > 0):
            raise ValueError("dtau and T must be positive")
        if self.dtau > self.T:
            raise ValueError("dtau must not exceed T")
        if self.scheme not in ("auto", "euler", "splitting"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def steps(self) -> int:
        # tolerate float noise in T/dtau before rounding up
        return int(math.ceil(self.T / self.dtau - 1e-9))


def path_rng(master_seed: int, path_index: int) -> np.random.Generator:
    """Independent generator for one path, hashed from (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(path_index)]))


def _draw(rng: np.random.Generator, steps: int, m: int, dtau: float, kind: str) -> np.ndarray:
    scale = math.sqrt(dtau)
    if kind == "real":
        return rng.standard_normal((steps, m)) * scale
    z = rng.standard_normal((steps, m, 2)) * scale
    return z[..., 0] + 1j * z[..., 1]


def sample_wiener_increments(m: int, steps: int, dtau: float, seed: int,
                             kind: str = "complex", path_index: int = 0) -> np.ndarray:
    """Increment table of shape ``(steps, m)``.

    Real kind: i.i.d. ``N(0, dtau)``.  Complex kind: real and imaginary parts
    each i.i.d. ``N(0, dtau)``, so ``E|dbeta|^2 = 2 dtau``.  Draws are taken
    from :func:`path_rng` and are identical however the table is chunked.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return _draw(path_rng(seed, path_index), steps, m, dtau, kind)


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------

def _euler(x, sys: SdeSystem, dbeta, dtau):
    dx = sys.drift(x)
    if sys.stiff:
        dx = dx + sys.stiff_drift(x)
    return x + dx * dtau + sys.noise(x, dbeta)


def _splitting(x, sys: SdeSystem, dbeta, dtau):
    xh = unperturbed_flow(x, sys.H, sys.eps, dtau)
    return xh + sys.drift(xh) * dtau + sys.noise(xh, dbeta)


def _truncated(x, sys: SdeSystem, dbeta, dtau):
    xp = np.maximum(x, 0.0)
    drift = np.asarray(sys.drift(xp), dtype=float)
    noise = np.asarray(sys.noise(xp, dbeta), dtype=float)
    if xp.ndim == 2:
        return kernels.truncated_update(xp, np.ascontiguousarray(drift),
                                        np.ascontiguousarray(noise), dtau)
    return np.maximum(xp + drift * dtau + noise, 0.0)


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite state after step")
    return x


def euler_maruyama_step(x, sys: SdeSystem, dbeta, dtau: float):
    """``x + (drift + stiff rotation) dtau + dispersion dbeta``."""
    return _check_finite(_euler(np.asarray(x, dtype=sys.dtype), sys, dbeta, dtau))


def splitting_step(v, sys: SdeSystem, dbeta, dtau: float):
    """Lie-Trotter: exact stiff rotation, then Euler on ``(P, B)``."""
    if not sys.stiff:
        raise ValueError("splitting needs a system with a stiff part")
    return _check_finite(_splitting(np.asarray(v, dtype=np.complex128), sys, dbeta, dtau))


def action_step_truncated(I, sys: SdeSystem, dbeta, dtau: float):
    """Full-truncation Euler: coefficients at ``max(I, 0)``, negatives clamped."""
    if sys.space != "action":
        raise ValueError("truncated stepping is for action systems")
    return _check_finite(_truncated(np.asarray(I, dtype=float), sys, dbeta, dtau))


def stepper_for(sys: SdeSystem, scheme: str = "auto") -> Callable:
    if sys.space == "action":
        return _truncated
    if scheme == "splitting" or (scheme == "auto" and sys.stiff):
        if not sys.stiff:
            raise ValueError("splitting needs a system with a stiff part")
        return _splitting
    return _euler


# ---------------------------------------------------------------------------
# batch integration
# ---------------------------------------------------------------------------

@dataclass
class BatchResult:
    times: np.ndarray           # snapshot times
    snapshots: np.ndarray       # (len(times), N, n); NaN rows for diverged paths
    diverged: np.ndarray        # (N,) bool
    diverged_step: np.ndarray   # (N,) int, -1 if never
    extra: dict = field(default_factory=dict)


def snapshot_steps(times: Sequence[float], dtau: float, steps: int) -> np.ndarray:
    idx = np.rint(np.asarray(times, dtype=float) / dtau).astype(np.int64)
    if np.any(idx < 0) or np.any(idx > steps):
        raise ValueError("snapshot time outside [0, T]")
    return idx


def _run_group(sys: SdeSystem, x0: np.ndarray, cfg: PathConfig, indices: np.ndarray,
               snap_idx: np.ndarray, observer) -> tuple:
    step = stepper_for(sys, cfg.scheme)
    N = len(indices)
    x = np.array(np.broadcast_to(x0, (N, sys.n)), dtype=sys.dtype)
    rngs = [path_rng(cfg.seed, i) for i in indices]
    snaps = np.full((len(snap_idx), N, sys.n), np.nan, dtype=sys.dtype)
    dead = np.zeros(N, dtype=bool)
    dead_step = np.full(N, -1, dtype=np.int64)
    steps = cfg.steps
    obs_state = observer.start(N) if observer is not None else None

    def record(k):
        for j in np.nonzero(snap_idx == k)[0]:
            s = x.copy()
            s[dead] = np.nan
            snaps[j] = s

    record(0)
    if observer is not None:
        observer.update(obs_state, x, dead, 0)
    done = 0
    stop = False
    with np.errstate(over="ignore", invalid="ignore"):
        while done < steps and not stop:
            chunk = min(NOISE_CHUNK, steps - done)
            inc = np.stack([_draw(r, chunk, sys.m, cfg.dtau, sys.noise_kind) for r in rngs], axis=1)
            for s in range(chunk):
                x = step(x, sys, inc[s], cfg.dtau)
                k = done + s + 1
                bad = ~np.all(np.isfinite(x), axis=1)
                if np.any(bad & ~dead):
                    new = bad & ~dead
                    dead_step[new] = k
                    dead |= new
                if np.any(dead):
                    x[dead] = 0.0
                record(k)
                # an observer may end the run once it has what it needs;
                # later snapshots then stay NaN
                if observer is not None and observer.update(obs_state, x, dead, k):
                    stop = True
                    break
            done += chunk
    return snaps, dead, dead_step, obs_state


def integrate_batch(sys: SdeSystem, x0, cfg: PathConfig, n_paths: int,
                    snapshot_times: Sequence[float], observer=None,
                    workers: int = 1, first_index: int = 0) -> BatchResult:
    """Integrate ``n_paths`` independent paths; path ``i`` draws its noise
    from ``path_rng(cfg.seed, first_index + i)`` so the result does not
    depend on ``workers``."""
    x0 = np.asarray(x0, dtype=sys.dtype)
    if x0.shape[-1] != sys.n:
        raise ValueError("initial state has the wrong dimension")
    snap_idx = snapshot_steps(snapshot_times, cfg.dtau, cfg.steps)
    indices = np.arange(first_index, first_index + n_paths)
    x0b = np.broadcast_to(x0, (n_paths, sys.n))
    if workers <= 1 or observer is not None:
        groups = [np.arange(n_paths)]
    else:
        groups = [g for g in np.array_split(np.arange(n_paths), workers) if len(g)]

    def work(g):
        return _run_group(sys, x0b[g], cfg, indices[g], snap_idx, observer)

    if len(groups) == 1:
        results = [work(groups[0])]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, groups))
    snaps = np.concatenate([r[0] for r in results], axis=1)
    dead = np.concatenate([r[1] for r in results])
    dead_step = np.concatenate([r[2] for r in results])
    extra = {"observer": results[0][3]} if observer is not None else {}
    return BatchResult(times=snap_idx * cfg.dtau, snapshots=snaps, diverged=dead,
                       diverged_step=dead_step, extra=extra)


@dataclass
class Path:
    times: np.ndarray
    states: np.ndarray
    diverged: bool


def integrate_path(sys: SdeSystem, x0, cfg: PathConfig, stride: int = 1,
                   path_index: int = 0) -> Path:
    """One path on the grid ``k * dtau``, keeping every ``stride``-th state.

    A non-finite state aborts the path; the finite prefix is returned with
    ``diverged=True``.
    """
    steps = cfg.steps
    times = np.arange(0, steps + 1, stride) * cfg.dtau
    res = integrate_batch(sys, x0, cfg, 1, times, first_index=path_index)
    states = res.snapshots[:, 0, :]
    if res.diverged[0]:
        keep = np.arange(0, steps + 1, stride) < res.diverged_step[0]
        return Path(times=times[keep], states=states[keep], diverged=True)
    return Path(times=times, states=states, diverged=False)


# ---------------------------------------------------------------------------
# weak self-convergence
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceStudy:
    dtaus: np.ndarray
    means: np.ndarray
    reference_dtau: float
    reference_mean: float
    errors: np.ndarray
    slope: float


def weak_convergence_study(sys: SdeSystem, x0, T: float, dtaus: Sequence[float],
                           n_paths: int, seed: int,
                           observable: Callable[[np.ndarray], np.ndarray],
                           block: int = 2000) -> ConvergenceStudy:
    """Error of ``E[observable(x(T))]`` against a reference at ``min(dtaus)/8``.

    All step sizes reuse the same fine Brownian increments (summed in blocks),
    so the differences carry little Monte Carlo noise.  ``slope`` is the
    least-squares slope of ``log|error|`` against ``log dtau``.
    """
    dtaus = np.asarray(sorted(dtaus, reverse=True), dtype=float)
    ref = dtaus[-1] / 8
    ratios = np.rint(dtaus / ref).astype(int)
    if not np.allclose(ratios * ref, dtaus, rtol=1e-9):
        raise ValueError("step sizes must be integer multiples of the reference step")
    fine_steps = int(round(T / ref))
    if not np.isclose(fine_steps * ref, T):
        raise ValueError("T must be a multiple of the reference step")
    step = stepper_for(sys)
    sums = np.zeros(len(dtaus) + 1)
    for start in range(0, n_paths, block):
        idx = range(start, min(start + block, n_paths))
        inc = np.stack([_draw(path_rng(seed, i), fine_steps, sys.m, ref, sys.noise_kind)
                        for i in idx], axis=1)
        for j, r in enumerate(list(ratios) + [1]):
            h = ref * r
            coarse = inc.reshape(fine_steps // r, r, len(idx), sys.m).sum(axis=1)
            x = np.array(np.broadcast_to(np.asarray(x0, dtype=sys.dtype), (len(idx), sys.n)))
            for s in range(coarse.shape[0]):
                x = step(x, sys, coarse[s], h)
            sums[j] += float(np.sum(observable(x)))
    means = sums / n_paths
    errors = means[:-1] - means[-1]
    slope = float(np.polyfit(np.log(dtaus), np.log(np.abs(errors)), 1)[0])
    return ConvergenceStudy(dtaus=dtaus, means=means[:-1], reference_dtau=ref,
                            reference_mean=float(means[-1]), errors=errors, slope=slope)
