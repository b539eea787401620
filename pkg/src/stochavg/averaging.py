"""Torus averages of vector fields and diffusion matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TWO_PI, DispersionField

# Embedded rank-1 lattice generating vector (Kuo, lattice-39102-1024-1048576.3600),
# usable for any power-of-two point count up to 2**20.
LATTICE_GENERATOR = np.array(
    [1, 182667, 469891, 498753, 110745, 446247, 250185, 118627, 245333, 283199],
    dtype=np.int64,
)
LATTICE_MAX_POINTS = 2 ** 20
TENSOR_MAX_POINTS = 10 ** 7

EIG_REJECT = 1e-8


@dataclass(frozen=True)
class QuadratureRule:
    """Equal-weight nodes on the torus ``[0, 2*pi)^n``."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def phases(self) -> np.ndarray:
        return np.exp(1j * self.nodes)


def make_quadrature(n: int, M: int, kind: str = "tensor", seed: int = 0) -> QuadratureRule:
    """Build a torus rule.

    ``tensor``: ``M**n`` grid points (``M`` per dimension), exact for every
    trigonometric monomial with frequencies in ``(-M, M)^n``.
    ``lattice``: ``M`` points of a rank-1 lattice, ``M`` a power of two.
    ``monte-carlo``: ``M`` uniform points from a seeded generator.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "tensor":
        if M ** n > TENSOR_MAX_POINTS:
            raise ValueError(f"tensor rule with {M}**{n} points exceeds the memory guard")
        axis = TWO_PI * np.arange(M) / M
        nodes = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    elif kind == "lattice":
        if n > len(LATTICE_GENERATOR):
            raise ValueError(f"lattice generator only covers n <= {len(LATTICE_GENERATOR)}")
        if M > LATTICE_MAX_POINTS or M & (M - 1):
            raise ValueError("lattice rule needs a power-of-two M <= 2**20")
        j = np.arange(M, dtype=np.int64)[:, None]
        nodes = TWO_PI * ((j * LATTICE_GENERATOR[:n]) % M) / M
    elif kind == "monte-carlo":
        nodes = np.random.default_rng(seed).uniform(0.0, TWO_PI, size=(M, n))
    else:
        raise ValueError(f"unknown quadrature kind {kind!r}")
    size = nodes.shape[0]
    return QuadratureRule(nodes=nodes, weights=np.full(size, 1.0 / size), kind=kind)


def default_quadrature(n: int) -> QuadratureRule:
    if n <= 3:
        return make_quadrature(n, 32, "tensor")
    return make_quadrature(n, 2 ** 14, "lattice")


def _rotated_points(a, rule: QuadratureRule):
    a = np.asarray(a, dtype=np.complex128)
    ph = rule.phases()
    return a[..., None, :] * np.conj(ph), ph


def average_field(P, a, rule: QuadratureRule) -> np.ndarray:
    """Rotation average ``sum_j w_j Phi_{w_j} P(Phi_{-w_j} a)``."""
    pts, ph = _rotated_points(a, rule)
    vals = np.asarray(P(pts), dtype=np.complex128)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite field value during averaging")
    return np.einsum("m,...mk->...k", rule.weights, vals * ph)


@dataclass(frozen=True)
class AveragedDiffusion:
    """An averaged diffusion matrix ``K`` and its principal square root."""

    K: np.ndarray
    root: np.ndarray


def psd_sqrt(K, hermitian_tol: float = 1e-10) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix (batch aware).

    Negative eigenvalues down to ``-1e-8 * max(1, ||K||)`` are rounding and get
    clamped to zero; anything lower is rejected.
    """
    K = np.asarray(K)
    scale = np.maximum(1.0, np.max(np.abs(K), axis=(-2, -1), keepdims=True))
    asym = np.abs(K - np.conj(np.swapaxes(K, -1, -2))) / scale
    if np.any(asym > hermitian_tol):
        raise ValueError("matrix is not Hermitian")
    Ks = 0.5 * (K + np.conj(np.swapaxes(K, -1, -2)))
    lam, Q = np.linalg.eigh(Ks)
    if np.any(lam < -EIG_REJECT * scale[..., 0]):
        raise np.linalg.LinAlgError(f"matrix has a negative eigenvalue {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)
    return (Q * np.sqrt(lam)[..., None, :]) @ np.conj(np.swapaxes(Q, -1, -2))


def _hermitize(K):
    return 0.5 * (K + np.conj(np.swapaxes(K, -1, -2)))


def average_diffusion_state(B: DispersionField, a, rule: QuadratureRule) -> AveragedDiffusion:
    """Rotation-averaged ``B B^H`` and its Hermitian root."""
    if B.is_constant:
        # the conjugation by Phi averages each off-diagonal entry against exp(i(w_k - w_l))
        BB = B.matrix @ B.matrix.conj().T
        ph = rule.phases()
        K = np.einsum("m,mk,kl,ml->kl", rule.weights, ph, BB, np.conj(ph))
        a = np.asarray(a)
        K = np.broadcast_to(_hermitize(K), a.shape[:-1] + K.shape)
    else:
        pts, ph = _rotated_points(a, rule)
        C = ph[..., :, None] * B(pts)
        K = _hermitize(np.einsum("m,...mkj,...mlj->...kl", rule.weights, C, np.conj(C)))
    return AveragedDiffusion(K=np.asarray(K), root=psd_sqrt(K))


def action_drift(P, B: DispersionField, v) -> np.ndarray:
    """Ito drift of the actions: ``Re(conj(v_k) P_k(v)) + sum_l |B_kl(v)|^2``."""
    v = np.asarray(v, dtype=np.complex128)
    Bv = B(v)
    return np.real(np.conj(v) * P(v)) + np.sum(np.abs(Bv) ** 2, axis=-1)


def action_dispersion(B: DispersionField, v) -> np.ndarray:
    """Real ``n x 2*n1`` dispersion of the action equation.

    Columns ``[Re c, -Im c]`` with ``c_kj = conj(v_k) B_kj(v)`` act on the real
    and imaginary parts of the complex noise, so ``G G^T = Re(c c^H)`` is the
    exact Ito covariation of the actions.
    """
    v = np.asarray(v, dtype=np.complex128)
    c = np.conj(v)[..., :, None] * B(v)
    return np.concatenate([c.real, -c.imag], axis=-1)


def _angle_points(I, rule: QuadratureRule):
    I = np.asarray(I, dtype=float)
    if np.any(I < 0):
        raise ValueError("actions must be non-negative")
    return np.sqrt(2.0 * I)[..., None, :] * rule.phases()


def average_action_coefficients(P, B: DispersionField, I, rule: QuadratureRule):
    """Angle averages of the action drift and of ``G G^T``.

    Returns ``(Fbar, AveragedDiffusion)`` with ``root = sqrt(K)``.
    """
    pts = _angle_points(I, rule)
    w = rule.weights
    drift = np.real(np.conj(pts) * P(pts))
    # K_kl = Re sum_m w_m conj(v_k) v_l (B B^H)_kl at the node points
    outer = np.conj(pts)[..., :, None] * pts[..., None, :]
    if B.is_constant:
        BB = B.matrix @ B.matrix.conj().T
        Fbar = np.einsum("m,...mk->...k", w, drift) + np.real(np.diag(BB))
        K = np.real(np.einsum("m,...mkl->...kl", w, outer) * BB)
    else:
        Bv = B(pts)
        BB = Bv @ np.conj(np.swapaxes(Bv, -1, -2))
        Fbar = np.einsum("m,...mk->...k", w, drift + np.real(np.diagonal(BB, axis1=-2, axis2=-1)))
        K = np.real(np.einsum("m,...mkl->...kl", w, outer * BB))
    K = 0.5 * (K + np.swapaxes(K, -1, -2))
    return Fbar, AveragedDiffusion(K=K, root=np.real(psd_sqrt(K)))


def average_action_drift_only(P, I, rule: QuadratureRule) -> np.ndarray:
    """Angle average of ``Re(conj(v_k) P_k(v))`` (no Ito term)."""
    pts = _angle_points(I, rule)
    return np.einsum("m,...mk->...k", rule.weights, np.real(np.conj(pts) * P(pts)))


def torus_mean(f, rule: QuadratureRule):
    """Plain average ``sum_j w_j f(omega_j)`` of a function on the torus."""
    return np.einsum("m,m...->...", rule.weights, np.asarray(f(rule.nodes)))


__all__ = [
    "QuadratureRule", "make_quadrature", "default_quadrature", "average_field",
    "AveragedDiffusion", "average_diffusion_state", "action_drift", "action_dispersion",
    "average_action_coefficients", "average_action_drift_only", "psd_sqrt", "torus_mean",
]
