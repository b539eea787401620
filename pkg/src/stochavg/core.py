"""State representations, action-angle maps, rotations and model ingredients.

Every vector field in the package is *batch aware*: it accepts complex
states of shape ``(..., n)`` and returns arrays of the same leading shape.
A single state is just the ``(n,)`` case.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._kernels import kernels

FD_STEP = 1e-6
TWO_PI = 2.0 * np.pi


def as_state(v) -> np.ndarray:
    """Validate and return a complex state array of shape ``(..., n)``."""
    v = np.asarray(v, dtype=np.complex128)
    if v.ndim == 0 or v.shape[-1] < 1:
        raise ValueError("state must have at least one coordinate")
    if not np.all(np.isfinite(v)):
        raise ValueError("state has non-finite entries")
    return v


@dataclass(frozen=True)
class ActionAngle:
    """Actions ``I >= 0`` and angles ``phi`` in ``[0, 2*pi)``."""

    I: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        I = np.asarray(self.I, dtype=float)
        phi = np.mod(np.asarray(self.phi, dtype=float), TWO_PI)
        if np.any(I < 0):
            raise ValueError("actions must be non-negative")
        if I.shape != phi.shape:
            raise ValueError("actions and angles differ in shape")
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "phi", phi)


def to_action_angle(v) -> ActionAngle:
    v = as_state(v)
    I = 0.5 * np.abs(v) ** 2
    phi = np.where(v == 0, 0.0, np.mod(np.angle(v), TWO_PI))
    # np.mod can return 2*pi for tiny negative angles
    phi = np.where(phi >= TWO_PI, 0.0, phi)
    return ActionAngle(I, phi)


def from_action_angle(aa: ActionAngle) -> np.ndarray:
    if np.any(aa.I < 0):
        raise ValueError("actions must be non-negative")
    return np.sqrt(2.0 * aa.I) * np.exp(1j * aa.phi)


def actions(v) -> np.ndarray:
    """Actions ``|v_k|^2 / 2`` without the angle bookkeeping."""
    return 0.5 * (v.real ** 2 + v.imag ** 2)


def rotate(v, omega) -> np.ndarray:
    """Apply the torus rotation ``v_k -> exp(i omega_k) v_k``."""
    return np.asarray(v, dtype=np.complex128) * np.exp(1j * np.asarray(omega, dtype=float))


# ---------------------------------------------------------------------------
# model ingredients
# ---------------------------------------------------------------------------

def _fd_gradient(f: Callable, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of a batch-aware real function ``f(x[..., n])``."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for k in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[k] = step
        grad[..., k] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * step)
    return grad


@dataclass(frozen=True)
class IntegrableHamiltonian:
    """Energy ``H(I)`` of a Birkhoff-integrable system and its frequency map.

    ``grad`` may be omitted, in which case central finite differences of
    ``H`` with step ``1e-6`` are used.
    """

    H: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def gradH(self, I) -> np.ndarray:
        I = np.asarray(I, dtype=float)
        if self.grad is not None:
            return np.broadcast_to(np.asarray(self.grad(I), dtype=float), I.shape)
        return _fd_gradient(self.H, I)


def constant_frequency(lam) -> IntegrableHamiltonian:
    lam = np.asarray(lam, dtype=float)
    return IntegrableHamiltonian(H=lambda I: np.asarray(I) @ lam,
                                 grad=lambda I: np.broadcast_to(lam, np.shape(I)))


def unperturbed_flow(v, H: IntegrableHamiltonian, eps: float, dtau: float) -> np.ndarray:
    """Exact flow of ``i/eps diag(gradH(I)) v`` over slow time ``dtau``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = np.asarray(v, dtype=np.complex128)
    freq = H.gradH(actions(v))
    if v.ndim == 2:
        return kernels.rotate(v, np.ascontiguousarray(freq), dtau / eps)
    return v * np.exp(1j * freq * (dtau / eps))


class RealFunction:
    """A real-valued function ``h(v)`` on complex space, optionally with its
    Wirtinger derivative ``dh/dvbar`` supplied."""

    def __init__(self, value: Callable, dbar: Optional[Callable] = None):
        self._value = value
        self._dbar = dbar

    def __call__(self, v):
        return self._value(v)

    def dbar(self, v) -> np.ndarray:
        if self._dbar is not None:
            return self._dbar(v)
        return _fd_dbar(self._value, v)


def _fd_dbar(h: Callable, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.complex128)
    out = np.empty(v.shape, dtype=np.complex128)
    for k in range(v.shape[-1]):
        e = np.zeros(v.shape[-1], dtype=np.complex128)
        e[k] = FD_STEP
        dx = (np.asarray(h(v + e)) - np.asarray(h(v - e))) / (2 * FD_STEP)
        dy = (np.asarray(h(v + 1j * e)) - np.asarray(h(v - 1j * e))) / (2 * FD_STEP)
        out[..., k] = 0.5 * (dx + 1j * dy)
    return out


class PolynomialHamiltonian(RealFunction):
    """``h(v) = sum_t Re(c_t * prod_j v_j**alpha_tj * conj(v_j)**beta_tj)``.

    The value and the exact Wirtinger derivative run through the compiled
    kernels.
    """

    def __init__(self, terms: Sequence[tuple]):
        if not terms:
            raise ValueError("need at least one term")
        self.coef = np.array([complex(t[0]) for t in terms], dtype=np.complex128)
        self.alpha = np.array([t[1] for t in terms], dtype=np.int64)
        self.beta = np.array([t[2] for t in terms], dtype=np.int64)
        if np.any(self.alpha < 0) or np.any(self.beta < 0):
            raise ValueError("exponents must be non-negative")
        self.n = self.alpha.shape[1]
        super().__init__(self._eval, self._eval_dbar)

    def _batch(self, v, fn):
        v = np.asarray(v, dtype=np.complex128)
        flat = np.ascontiguousarray(v.reshape(-1, self.n))
        out = fn(flat, self.coef, self.alpha, self.beta)
        return out.reshape(v.shape[:-1] + out.shape[1:])

    def _eval(self, v):
        return self._batch(v, kernels.poly_value)

    def _eval_dbar(self, v):
        return self._batch(v, kernels.poly_dbar)

    def rotation_average(self) -> "PolynomialHamiltonian | None":
        """Terms invariant under every torus rotation (``alpha == beta``)."""
        keep = [(c, a, b) for c, a, b in zip(self.coef, self.alpha, self.beta)
                if np.array_equal(a, b)]
        return PolynomialHamiltonian(keep) if keep else None


def hamiltonian_field(h: Callable, v) -> np.ndarray:
    """The Hamiltonian vector field ``2i dh/dvbar`` of a real function ``h``.

    ``h`` may be a :class:`RealFunction` (exact derivative when available) or
    any batch-aware callable, differentiated by central differences.
    """
    if isinstance(h, RealFunction):
        d = h.dbar(v)
    else:
        d = _fd_dbar(h, v)
    if not np.all(np.isfinite(d)):
        raise FloatingPointError("non-finite gradient of h")
    return 2j * d


@dataclass(frozen=True)
class PerturbationField:
    """Perturbation ``P(v)``, optionally split as ``P1 + 2i dh/dvbar``."""

    P: Callable[[np.ndarray], np.ndarray]
    P1: Optional[Callable[[np.ndarray], np.ndarray]] = None
    h: Optional[Callable] = None

    def __call__(self, v):
        return self.P(v)

    @property
    def has_split(self) -> bool:
        return self.P1 is not None and self.h is not None

    def split_residual(self, v_samples) -> float:
        if not self.has_split:
            raise ValueError("perturbation carries no split")
        v = np.asarray(v_samples, dtype=np.complex128)
        r = self.P(v) - self.P1(v) - hamiltonian_field(self.h, v)
        return float(np.max(np.abs(r)))

    @classmethod
    def from_split(cls, P1, h) -> "PerturbationField":
        if h is None:
            return cls(P=P1, P1=P1, h=None)
        return cls(P=lambda v: P1(v) + hamiltonian_field(h, v), P1=P1, h=h)


class DispersionField:
    """Complex dispersion ``B(v)`` of shape ``(n, n1)``.

    Pass a matrix for a constant field or a batch-aware callable otherwise.
    """

    def __init__(self, B, n: Optional[int] = None, n1: Optional[int] = None):
        if callable(B):
            if n is None or n1 is None:
                raise ValueError("callable dispersion needs n and n1")
            self._fn = B
            self.matrix = None
            self.n, self.n1 = n, n1
        else:
            self.matrix = np.atleast_2d(np.asarray(B, dtype=np.complex128))
            self._fn = None
            self.n, self.n1 = self.matrix.shape
        if self.n1 < self.n:
            raise ValueError("dispersion needs at least n columns")

    @property
    def is_constant(self) -> bool:
        return self.matrix is not None

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.complex128)
        if self.matrix is not None:
            return np.broadcast_to(self.matrix, v.shape[:-1] + self.matrix.shape)
        return np.asarray(self._fn(v), dtype=np.complex128)


@dataclass(frozen=True)
class DomainBox:
    """The polydisc ``{v : |v_j| <= C_j}``."""

    C: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        if np.any(C <= 0):
            raise ValueError("box radii must be positive")
        object.__setattr__(self, "C", C)

    def contains(self, v) -> np.ndarray:
        return np.all(np.abs(v) <= self.C, axis=-1)


# ---------------------------------------------------------------------------
# assumption checkers
# ---------------------------------------------------------------------------

@dataclass
class RankReport:
    sigma_min: np.ndarray
    sigma_max: np.ndarray
    flagged: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flagged


def check_rank(B: DispersionField, v_samples, rel_tol: float = 1e-10) -> RankReport:
    """Smallest singular value of ``B(v)`` per sample; flags rank loss."""
    v = np.atleast_2d(np.asarray(v_samples, dtype=np.complex128))
    if v.shape[0] == 0:
        raise ValueError("need at least one sample")
    s = np.linalg.svd(B(v), compute_uv=False)
    # rank n needs the n-th singular value, not the last of n1
    smin, smax = s[:, B.n - 1], s[:, 0]
    flagged = [i for i in range(len(v)) if not smin[i] >= rel_tol * smax[i] or smax[i] == 0]
    return RankReport(sigma_min=smin, sigma_max=smax, flagged=flagged)


@dataclass
class CoercivityReport:
    worst: float
    worst_sample: int

    @property
    def ok(self) -> bool:
        return self.worst <= 0.0


def check_coercivity(P: Callable, v_samples, alpha1: float, alpha2: float) -> CoercivityReport:
    """Check ``Re<P(v), conj v> <= -alpha1 |v| + alpha2`` on samples."""
    if alpha1 < 0:
        raise ValueError("alpha1 must be non-negative")
    v = np.atleast_2d(np.asarray(v_samples, dtype=np.complex128))
    pairing = np.sum(np.real(P(v) * np.conj(v)), axis=-1)
    excess = pairing + alpha1 * np.linalg.norm(v, axis=-1) - alpha2
    i = int(np.argmax(excess))
    return CoercivityReport(worst=float(excess[i]), worst_sample=i)


@dataclass
class ResonanceReport:
    min_ratio: np.ndarray
    argmin: list
    near_resonant: list

    @property
    def ok(self) -> bool:
        return not self.near_resonant


def integer_vectors(n: int, S: int) -> np.ndarray:
    """All nonzero ``s`` in ``Z^n`` with ``|s|_inf <= S``, one of each ``+-s`` pair."""
    grid = np.array(list(itertools.product(range(-S, S + 1), repeat=n)), dtype=np.int64)
    grid = grid[np.any(grid != 0, axis=1)]
    # keep s whose first nonzero entry is positive
    first = grid[np.arange(len(grid)), np.argmax(grid != 0, axis=1)]
    return grid[first > 0]


def resonance_scan(H: IntegrableHamiltonian, I_samples, S: int,
                   threshold: float = 1e-6) -> ResonanceReport:
    """Smallest ``|gradH(I) . s| / |s|`` over nonzero ``|s|_inf <= S``.

    Report only: non-degeneracy holds for almost every ``I`` and cannot be
    decided pointwise.
    """
    if S < 1:
        raise ValueError("S must be >= 1")
    I = np.atleast_2d(np.asarray(I_samples, dtype=float))
    s = integer_vectors(I.shape[1], S)
    norms = np.linalg.norm(s, axis=1)
    freq = H.gradH(I)
    ratio = np.abs(freq @ s.T) / norms
    j = np.argmin(ratio, axis=1)
    mins = ratio[np.arange(len(I)), j]
    return ResonanceReport(min_ratio=mins, argmin=[tuple(s[k]) for k in j],
                           near_resonant=[i for i in range(len(I)) if mins[i] < threshold])


def check_gradient(f: Callable, grad: Callable, points, step: float = FD_STEP) -> float:
    """Max relative error between ``grad`` and central differences of ``f``."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    fd = _fd_gradient(f, x, step)
    g = np.asarray(grad(x), dtype=float)
    scale = np.maximum(np.linalg.norm(fd, axis=-1), 1e-12)
    return float(np.max(np.linalg.norm(g - fd, axis=-1) / scale))
