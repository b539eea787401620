"""Concrete systems: constant-frequency, damped/driven, and the anharmonic chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .core import (
    DispersionField,
    IntegrableHamiltonian,
    PerturbationField,
    PolynomialHamiltonian,
    constant_frequency,
)

TWO_PI = 2.0 * math.pi


@dataclass
class Model:
    """Model ingredients ``(H, P, B)`` plus the parameters that built them."""

    name: str
    n: int
    H: IntegrableHamiltonian
    P: PerturbationField
    B: DispersionField
    params: dict = field(default_factory=dict)
    ou: Optional["OuParameters"] = None
    oscillator: Optional["OscillatorMap"] = None


@dataclass(frozen=True)
class OuParameters:
    nu: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if nu.shape != b.shape:
            raise ValueError("nu and b must have the same length")
        if np.any(nu <= 0):
            raise ValueError("friction coefficients must be positive")
        if np.any(b == 0):
            raise ValueError("noise amplitudes must be nonzero")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "b", b)


def friction(nu) -> Callable:
    nu = np.asarray(nu, dtype=float)
    return lambda v: -nu * v


def linear_model(lam, nu=None, b=None) -> Model:
    """Constant frequencies ``lam`` with friction ``-nu v`` and noise ``diag(b)``."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    n = len(lam)
    nu = np.ones(n) if nu is None else nu
    b = np.ones(n) if b is None else b
    ou = OuParameters(nu, b)
    return Model(name="linear", n=n, H=constant_frequency(lam),
                 P=PerturbationField.from_split(friction(ou.nu), None),
                 B=DispersionField(np.diag(ou.b)), params={"lambda": lam.tolist()}, ou=ou)


def quadratic_hamiltonian(freq, anharmonicity: float = 1.0) -> IntegrableHamiltonian:
    """``H(I) = freq . I + anharmonicity * |I|^2 / 2``."""
    freq = np.asarray(freq, dtype=float)
    return IntegrableHamiltonian(
        H=lambda I: np.asarray(I) @ freq + 0.5 * anharmonicity * np.sum(np.asarray(I) ** 2, axis=-1),
        grad=lambda I: freq + anharmonicity * np.asarray(I),
    )


def default_coupling(n: int, strength: float = 0.1, resonant: float = 0.05):
    """Gauge-invariant quartic ``h``: energy exchange between neighbouring
    modes plus a rotation-invariant cross term."""
    if n < 2:
        return PolynomialHamiltonian([(resonant, (2,), (2,))])
    terms = []
    for k in range(n - 1):
        a = [0] * n
        bb = [0] * n
        a[k], bb[k + 1] = 2, 2
        terms.append((strength, tuple(a), tuple(bb)))
        a = [0] * n
        a[k] = a[k + 1] = 1
        terms.append((resonant, tuple(a), tuple(a)))
    return PolynomialHamiltonian(terms)


def damped_driven_model(H: IntegrableHamiltonian, h, ou: OuParameters) -> Model:
    """``P = -diag(nu) v + 2i dh/dvbar`` with constant ``B = diag(b)``."""
    return Model(name="damped_driven", n=len(ou.nu), H=H,
                 P=PerturbationField.from_split(friction(ou.nu), h),
                 B=DispersionField(np.diag(ou.b).astype(complex)), ou=ou)


@dataclass(frozen=True)
class OuActionLaw:
    """Stationary action law of independent complex OU modes."""

    ou: OuParameters

    @property
    def means(self) -> np.ndarray:
        return self.ou.b ** 2 / (2 * self.ou.nu)

    def cdf(self, x, k: int):
        return 1.0 - np.exp(-np.asarray(x) / self.means[k])

    def sample(self, N: int, rng: np.random.Generator) -> np.ndarray:
        return rng.exponential(self.means, size=(N, len(self.means)))

    def second_moment(self, tau, a0) -> np.ndarray:
        """``E|a_k(tau)|^2`` started from ``a0``."""
        decay = np.exp(-2 * self.ou.nu * tau)
        return decay * np.abs(np.asarray(a0)) ** 2 + self.ou.b ** 2 / self.ou.nu * (1 - decay)


def ou_exact_action_law(ou: OuParameters) -> OuActionLaw:
    return OuActionLaw(ou)


# ---------------------------------------------------------------------------
# single oscillator action-angle map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OscillatorPotential:
    """Even convex potential ``V`` with restoring force ``Q = V'``.

    ``gap(qmax, s)`` may return ``(V(qmax) - V(qmax s)) / (1 - s^2)`` in closed
    form, which keeps the period integrals accurate near turning points.
    """

    V: Callable
    Q: Callable
    Qprime: Callable
    alpha: float
    beta: float
    gap: Optional[Callable] = None

    def energy_gap(self, qmax, s):
        if self.gap is not None:
            return self.gap(qmax, s)
        return (self.V(qmax) - self.V(qmax * s)) / (1.0 - s * s)

    def validate(self, samples) -> None:
        q = np.asarray(samples, dtype=float)
        if not np.allclose(self.Q(-q), -self.Q(q), rtol=0, atol=1e-12 * (1 + np.abs(self.Q(q)))):
            raise ValueError("force is not odd")
        if np.any(self.Qprime(q) <= 0):
            raise ValueError("potential is not convex")


def quartic_potential(alpha: float = 1.0, beta: float = 0.0) -> OscillatorPotential:
    """``V = alpha q^2 / 2 + beta q^4 / 4``."""
    if alpha <= 0 or beta < 0:
        raise ValueError("need alpha > 0 and beta >= 0")
    return OscillatorPotential(
        V=lambda q: 0.5 * alpha * q ** 2 + 0.25 * beta * q ** 4,
        Q=lambda q: alpha * q + beta * q ** 3,
        Qprime=lambda q: alpha + 3 * beta * q ** 2,
        alpha=alpha,
        beta=beta,
        gap=lambda qm, s: 0.5 * alpha * qm ** 2 + 0.25 * beta * qm ** 4 * (1 + s * s),
    )


_GL_NODES = 96
_gl_x, _gl_w = np.polynomial.legendre.leggauss(_GL_NODES)


def _gauss(f, a, b):
    x = 0.5 * (b - a) * _gl_x + 0.5 * (b + a)
    return 0.5 * (b - a) * np.dot(_gl_w, f(x))


def turning_point(pot: OscillatorPotential, E: float) -> float:
    if not E > 0:
        raise ValueError("energy must be positive")
    hi = 1.0
    for _ in range(200):
        if pot.V(hi) > E:
            break
        hi *= 2.0
    else:
        raise RuntimeError("could not bracket the turning point")
    return brentq(lambda q: pot.V(q) - E, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _half_time(pot: OscillatorPotential, qm: float, psi0: float) -> float:
    """Time to go from ``qmax sin(psi0)`` to ``qmax`` on one branch."""
    # with q = qmax sin(psi), dq / |p| = qmax dpsi / sqrt(2 gap)
    return _gauss(lambda psi: qm / np.sqrt(2.0 * pot.energy_gap(qm, np.sin(psi))), psi0, 0.5 * np.pi)


def oscillator_action(pot: OscillatorPotential, E: float) -> tuple[float, float]:
    """Action ``I(E)`` and frequency ``omega(E) = 2 pi / period``."""
    qm = turning_point(pot, E)
    # I = (2/pi) int_0^{pi/2} sqrt(2 (E - V)) qmax cos(psi) dpsi, with E - V = gap cos^2
    I = (2.0 / np.pi) * _gauss(
        lambda psi: np.sqrt(2.0 * pot.energy_gap(qm, np.sin(psi))) * qm * np.cos(psi) ** 2,
        0.0, 0.5 * np.pi)
    period = 4.0 * _half_time(pot, qm, 0.0)
    return float(I), float(TWO_PI / period)


def energy_of_action(pot: OscillatorPotential, I: float) -> float:
    if I <= 0:
        raise ValueError("action must be positive")
    w0 = math.sqrt(pot.alpha)
    hi = max(I * w0, 1e-300)
    while oscillator_action(pot, hi)[0] < I:
        hi *= 2.0
    lo = hi / 2.0
    while oscillator_action(pot, lo)[0] > I:
        lo /= 2.0
    return brentq(lambda E: oscillator_action(pot, E)[0] - I, lo, hi, xtol=1e-15 * hi, rtol=1e-15)


def oscillator_to_birkhoff(pot: OscillatorPotential, q: float, p: float) -> tuple[float, float]:
    """``(q, p) -> (I, phi)``; ``phi = 0`` at ``(qmax, 0)``, increasing with time."""
    if q == 0 and p == 0:
        raise ValueError("the origin has no angle")
    E = 0.5 * p * p + float(pot.V(q))
    qm = turning_point(pot, E)
    I, omega = oscillator_action(pot, E)
    period = TWO_PI / omega
    psi = math.asin(min(1.0, max(-1.0, q / qm)))
    t = _half_time(pot, qm, psi)
    if p > 0:
        t = period - t
    return I, float(np.mod(omega * t, TWO_PI))


def oscillator_from_birkhoff(pot: OscillatorPotential, I: float, phi: float) -> tuple[float, float]:
    """Inverse map: integrate ``q'' = -Q(q)`` from ``(qmax, 0)`` for ``phi / omega``."""
    E = energy_of_action(pot, I)
    qm = turning_point(pot, E)
    _, omega = oscillator_action(pot, E)
    t = float(np.mod(phi, TWO_PI)) / omega
    if t == 0.0:
        return qm, 0.0
    sol = solve_ivp(lambda _, y: (y[1], -pot.Q(y[0])), (0.0, t), (qm, 0.0),
                    method="DOP853", rtol=1e-13, atol=1e-14)
    if not sol.success:
        raise RuntimeError(sol.message)
    return float(sol.y[0, -1]), float(sol.y[1, -1])


class OscillatorMap:
    """``E(I)`` and ``omega(I)`` interpolated on a log-spaced energy grid.

    Below the grid the frequency is continued linearly from the harmonic
    value ``sqrt(alpha)``.
    """

    def __init__(self, pot: OscillatorPotential, E_min: float = 1e-6, E_max: float = 1e3,
                 points: int = 400):
        self.pot = pot
        E = np.geomspace(E_min, E_max, points)
        tab = np.array([oscillator_action(pot, e) for e in E])
        self.E_grid, self.I_grid, self.omega_grid = E, tab[:, 0], tab[:, 1]
        logI = np.log(self.I_grid)
        self._logE = PchipInterpolator(logI, np.log(E))
        self._omega = PchipInterpolator(logI, self.omega_grid)
        self.omega0 = math.sqrt(pot.alpha)

    def _split(self, I):
        I = np.asarray(I, dtype=float)
        low = I < self.I_grid[0]
        safe = np.where(low, self.I_grid[0], I)
        return I, low, np.log(safe)

    def omega(self, I) -> np.ndarray:
        I, low, logI = self._split(I)
        slope = (self.omega_grid[0] - self.omega0) / self.I_grid[0]
        return np.where(low, self.omega0 + slope * I, self._omega(logI))

    def energy(self, I) -> np.ndarray:
        I, low, logI = self._split(I)
        slope = (self.omega_grid[0] - self.omega0) / self.I_grid[0]
        return np.where(low, self.omega0 * I + 0.5 * slope * I * I, np.exp(self._logE(logI)))


def chain_model(pot: OscillatorPotential, n: int, nu=None, b=None,
                omap: Optional[OscillatorMap] = None) -> Model:
    """Uncoupled chain ``q_k'' = -Q(q_k)`` in Birkhoff coordinates.

    Default perturbation is friction plus diagonal noise acting on the
    Birkhoff variables.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    omap = omap or OscillatorMap(pot)
    nu = np.full(n, 0.1) if nu is None else nu
    b = np.full(n, 0.1) if b is None else b
    ou = OuParameters(nu, b)
    H = IntegrableHamiltonian(H=lambda I: np.sum(omap.energy(I), axis=-1), grad=omap.omega)
    return Model(name="chain_quartic", n=n, H=H,
                 P=PerturbationField.from_split(friction(ou.nu), None),
                 B=DispersionField(np.diag(ou.b).astype(complex)),
                 params={"alpha": pot.alpha, "beta": pot.beta}, ou=ou, oscillator=omap)


def chain_to_birkhoff(pot: OscillatorPotential, q, p) -> np.ndarray:
    """Per-site ``(q_k, p_k) -> v_k = sqrt(2 I_k) exp(i phi_k)``."""
    out = []
    for qk, pk in zip(np.atleast_1d(q), np.atleast_1d(p)):
        I, phi = oscillator_to_birkhoff(pot, float(qk), float(pk))
        out.append(math.sqrt(2 * I) * np.exp(1j * phi))
    return np.array(out)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def _linear(params: dict) -> Model:
    lam = params.get("lambda", [1.0, math.sqrt(2.0)])
    return linear_model(lam, params.get("nu"), params.get("b"))


def _damped_driven(params: dict) -> Model:
    ou = OuParameters(params.get("nu", [1.0, 2.0]), params.get("b", [1.0, 0.5]))
    n = len(ou.nu)
    freq = params.get("freq", [1.0, math.sqrt(2.0)][:n] if n <= 2 else list(np.sqrt(np.arange(1, n + 1))))
    H = quadratic_hamiltonian(freq, params.get("anharmonicity", 1.0))
    terms = params.get("h_terms")
    if terms is None:
        h = default_coupling(n, params.get("coupling", 0.1), params.get("cross", 0.05))
    elif terms:
        h = PolynomialHamiltonian([(complex(*t[0]) if isinstance(t[0], (list, tuple)) else t[0],
                                    t[1], t[2]) for t in terms])
    else:
        h = None
    model = damped_driven_model(H, h, ou)
    model.params = dict(params)
    return model


def _chain_quartic(params: dict) -> Model:
    pot = quartic_potential(params.get("alpha", 1.0), params.get("beta", 0.5))
    return chain_model(pot, int(params.get("n", 2)), params.get("nu"), params.get("b"))


MODEL_REGISTRY: dict[str, Callable[[dict], Model]] = {
    "linear": _linear,
    "damped_driven": _damped_driven,
    "chain_quartic": _chain_quartic,
}


def build_model(key: str, params: Optional[dict] = None) -> Model:
    try:
        factory = MODEL_REGISTRY[key]
    except KeyError:
        raise ValueError(f"unknown model {key!r}; choose from {sorted(MODEL_REGISTRY)}") from None
    return factory(dict(params or {}))
