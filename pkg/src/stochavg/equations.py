"""Builders for the full stiff system and its averaged/effective limits."""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .averaging import (
    QuadratureRule,
    action_dispersion,
    action_drift,
    average_action_coefficients,
    average_action_drift_only,
    average_diffusion_state,
    average_field,
)
from .core import DispersionField, IntegrableHamiltonian, PerturbationField
from .sde import SdeSystem

MEMO_GRID = 1e-6
MEMO_SIZE = 4096
SPLIT_TOL = 1e-8


def build_full(H: IntegrableHamiltonian, P, B: DispersionField, eps: float) -> SdeSystem:
    """Stiff system ``dv = (i/eps) diag(gradH(I)) v + P(v) + B(v) dbeta^c``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return SdeSystem(space="complex", n=B.n, m=B.n1, drift=P, dispersion=B,
                     noise_kind="complex", H=H, eps=float(eps),
                     dispersion_matrix=B.matrix if B.is_constant else None,
                     tag=f"full(eps={eps:g})")


@dataclass(frozen=True)
class ActionEquation:
    """Drift ``F(v)`` and dispersion ``G(v)`` of the (non-closed) action SDE."""

    P: object
    B: DispersionField

    def F(self, v):
        return action_drift(self.P, self.B, v)

    def G(self, v):
        return action_dispersion(self.B, v)


def build_action_sde(P, B: DispersionField) -> ActionEquation:
    return ActionEquation(P=P, B=B)


class _AveragedActionCoefficients:
    """Memoized ``(Fbar, sqrt K)`` on a ``1e-6`` quantization grid in ``I``.

    Coefficients are always evaluated at the quantized point, so a cache hit
    is bitwise identical to a recomputation.  Batches bypass the cache but
    reuse the last batch when drift and dispersion are requested in turn.
    """

    def __init__(self, P, B: DispersionField, rule: QuadratureRule):
        self.P, self.B, self.rule = P, B, rule
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self._last = None

    @staticmethod
    def quantize(I):
        return np.rint(np.asarray(I, dtype=float) / MEMO_GRID).astype(np.int64)

    def _compute(self, key):
        Fbar, diff = average_action_coefficients(self.P, self.B, key * MEMO_GRID, self.rule)
        return Fbar, diff.root

    def __call__(self, I):
        key = self.quantize(I)
        if key.ndim == 1:
            h = key.tobytes()
            with self._lock:
                hit = self._cache.get(h)
                if hit is not None:
                    self._cache.move_to_end(h)
                    return hit
            val = self._compute(key)
            with self._lock:
                self._cache[h] = val
                if len(self._cache) > MEMO_SIZE:
                    self._cache.popitem(last=False)
            return val
        last = self._last
        if last is not None and last[0].shape == key.shape and np.array_equal(last[0], key):
            return last[1]
        val = self._compute(key)
        self._last = (key, val)
        return val

    def drift(self, I):
        return self(I)[0]

    def dispersion(self, I):
        return self(I)[1]


def build_averaged_action(P, B: DispersionField, rule: QuadratureRule) -> SdeSystem:
    """Averaged action SDE on the closed orthant, real noise of dimension n."""
    coeffs = _AveragedActionCoefficients(P, B, rule)
    return SdeSystem(space="action", n=B.n, m=B.n, drift=coeffs.drift,
                     dispersion=coeffs.dispersion, noise_kind="real", tag="averaged_action")


def _effective(drift_field, B: DispersionField, rule: QuadratureRule, tag: str) -> SdeSystem:
    def drift(a):
        return average_field(drift_field, a, rule)

    if B.is_constant:
        root = average_diffusion_state(B, np.zeros(B.n), rule).root
        return SdeSystem(space="complex", n=B.n, m=B.n, drift=drift,
                         dispersion=lambda a: np.broadcast_to(root, np.shape(a)[:-1] + root.shape),
                         noise_kind="complex", dispersion_matrix=root, tag=tag)

    def dispersion(a):
        return average_diffusion_state(B, a, rule).root

    return SdeSystem(space="complex", n=B.n, m=B.n, drift=drift, dispersion=dispersion,
                     noise_kind="complex", tag=tag)


def build_effective(P, B: DispersionField, rule: QuadratureRule) -> SdeSystem:
    """Effective equation: averaged drift, root of the averaged ``B B^H``."""
    return _effective(P, B, rule, "effective")


def build_effective_modified(P: PerturbationField, B: DispersionField,
                             rule: QuadratureRule, probes: int = 16, seed: int = 0) -> SdeSystem:
    """Effective equation with the Hamiltonian part of ``P`` left out of the drift."""
    if P.P1 is None:
        raise ValueError("perturbation carries no P1/h split")
    if P.h is not None:
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(probes, B.n)) + 1j * rng.normal(size=(probes, B.n))
        res = P.split_residual(v)
        if not res <= SPLIT_TOL:
            raise ValueError(f"P - P1 - hamiltonian_field(h) = {res:.2e} on probe points")
    return _effective(P.P1, B, rule, "effective_modified")


@dataclass(frozen=True)
class AveragedODE:
    """Deterministic averaged action flow ``dI/dtau = <<Re(conj v P)>>(I)``."""

    P: object
    rule: QuadratureRule

    def rhs(self, I):
        return average_action_drift_only(self.P, np.maximum(I, 0.0), self.rule)

    def integrate(self, I0, T: float, dtau: float):
        """Classical RK4; returns ``(times, states)``."""
        steps = int(np.ceil(T / dtau - 1e-9))
        I = np.asarray(I0, dtype=float)
        out = np.empty((steps + 1,) + I.shape)
        out[0] = I
        for k in range(steps):
            k1 = self.rhs(I)
            k2 = self.rhs(I + 0.5 * dtau * k1)
            k3 = self.rhs(I + 0.5 * dtau * k2)
            k4 = self.rhs(I + dtau * k3)
            I = I + dtau / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            out[k + 1] = I
        return np.arange(steps + 1) * dtau, out


def build_deterministic_averaged(P, rule: QuadratureRule) -> AveragedODE:
    return AveragedODE(P=P, rule=rule)


@dataclass(frozen=True)
class EquationBundle:
    full: SdeSystem
    action_sde: ActionEquation
    averaged_action: SdeSystem
    effective: SdeSystem
    effective_modified: Optional[SdeSystem]
    deterministic_avg: AveragedODE

    def system(self, name: str) -> SdeSystem:
        sys = getattr(self, name)
        if sys is None:
            raise ValueError(f"{name} is not available for this model")
        return sys


def build_bundle(H: IntegrableHamiltonian, P: PerturbationField, B: DispersionField,
                 eps: float, rule: QuadratureRule) -> EquationBundle:
    modified = build_effective_modified(P, B, rule) if P.P1 is not None else None
    return EquationBundle(
        full=build_full(H, P, B, eps),
        action_sde=build_action_sde(P, B),
        averaged_action=build_averaged_action(P, B, rule),
        effective=build_effective(P, B, rule),
        effective_modified=modified,
        deterministic_avg=build_deterministic_averaged(P, rule),
    )
