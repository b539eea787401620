"""Configuration-driven experiment runner.

``stochavg <command> <config.yaml> [--out DIR]`` with commands ``simulate``,
``sweep``, ``exit-times`` and ``check``.  The YAML schema is documented in
``configs/README.md``.  Exit codes: 0 success, 2 config error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import sys
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from . import __version__
from ._kernels import backend
from .averaging import average_action_coefficients, default_quadrature, make_quadrature
from .core import (
    DispersionField,
    DomainBox,
    check_coercivity,
    check_gradient,
    check_rank,
    from_action_angle,
    resonance_scan,
    to_action_angle,
)
from .ensemble import (
    DIVERGENCE_LIMIT,
    EnsembleWarning,
    action_distribution,
    atomic_write,
    ensemble_csv,
    exit_csv,
    exit_time_stats,
    moment_report,
    noise_floor,
    run_ensemble,
    stationary_estimate,
    to_json,
    wasserstein1,
    wasserstein1_exponential,
)
from .equations import build_bundle
from .models import build_model
from .sde import PathConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

SYSTEMS = ("full", "averaged_action", "effective", "effective_modified", "deterministic")
SYSTEM_IDS = {name: i for i, name in enumerate(SYSTEMS)}
MIN_COMPARISON_N = 100
GRADIENT_TOL = 1e-5
ROUND_TRIP_TOL = 1e-12
IDENTITY_TOL = 1e-8
BOUNDARY_DET_TOL = 1e-10


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULTS = {
    "model": {"key": "damped_driven", "params": {}},
    "eps": [0.01],
    "T": 1.0,
    "dtau": 1e-3,
    "dtau_averaged": None,
    "N": 1000,
    "seed": 0,
    "snapshots": None,
    "systems": ["full"],
    "x0": None,
    "dispersion": None,
    "quadrature": None,
    "scheme": "auto",
    "workers": 1,
    "output": "out",
    "exit": None,
    "stationary": None,
    "check": {},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k != "check":
            out[k] = {**base[k], **v}
        else:
            out[k] = v
    return out


def _complex_vector(raw, name: str) -> np.ndarray:
    """Accept reals, ``[re, im]`` pairs or strings like ``'1+0.5j'``."""
    try:
        vals = []
        for x in raw:
            if isinstance(x, (list, tuple)):
                if len(x) != 2:
                    raise ConfigError(f"{name}: complex entries are [re, im] pairs")
                vals.append(complex(float(x[0]), float(x[1])))
            elif isinstance(x, str):
                vals.append(complex(x.replace(" ", "")))
            else:
                vals.append(complex(float(x)))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{name}: {err}") from None
    return np.array(vals, dtype=np.complex128)


def _complex_matrix(raw, name: str) -> np.ndarray:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{name} must be a non-empty list of rows")
    rows = [_complex_vector(r, name) for r in raw]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{name} rows have different lengths")
    return np.array(rows)


@dataclass
class ExperimentConfig:
    raw: dict
    model_key: str
    model_params: dict
    eps: list
    T: float
    dtau: float
    dtau_averaged: float
    N: int
    seed: int
    snapshots: list
    systems: list
    x0: np.ndarray
    dispersion: Optional[np.ndarray]
    quadrature: Optional[dict]
    scheme: str
    workers: int
    output: str
    exit: Optional[dict] = None
    stationary: Optional[dict] = None
    check: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """Fully resolved configuration as written to the metadata file."""
        out = copy.deepcopy(self.raw)
        out.update(eps=self.eps, T=self.T, dtau=self.dtau, dtau_averaged=self.dtau_averaged,
                   N=self.N, seed=self.seed, snapshots=self.snapshots, systems=self.systems,
                   x0=None if self.x0 is None else [[z.real, z.imag] for z in self.x0])
        # the output directory does not affect any number, so reruns elsewhere match bytewise
        out.pop("output", None)
        return out


def parse_config(data) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    raw = _merge(DEFAULTS, data)
    model = raw["model"]
    if not isinstance(model, dict) or "key" not in model:
        raise ConfigError("model needs a 'key'")
    try:
        eps = [float(e) for e in np.atleast_1d(raw["eps"])]
        T, dtau = float(raw["T"]), float(raw["dtau"])
        dtau_avg = float(raw["dtau_averaged"]) if raw["dtau_averaged"] is not None else dtau
        N, seed, workers = int(raw["N"]), int(raw["seed"]), int(raw["workers"])
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    if not all(e > 0 for e in eps) or len(set(eps)) != len(eps):
        raise ConfigError("eps values must be positive and distinct")
    if not (T > 0 and 0 < dtau <= T and 0 < dtau_avg <= T):
        raise ConfigError("need 0 < dtau <= T")
    if N < 2 or workers < 1:
        raise ConfigError("N must be >= 2 and workers >= 1")
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit non-negative integer")
    systems = list(raw["systems"])
    bad = [s for s in systems if s not in SYSTEMS]
    if bad:
        raise ConfigError(f"unknown systems {bad}; choose from {list(SYSTEMS)}")
    snaps = raw["snapshots"] if raw["snapshots"] is not None else [T]
    try:
        snaps = sorted(float(t) for t in snaps)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"snapshots: {err}") from None
    if any(t < 0 or t > T + 1e-12 for t in snaps):
        raise ConfigError("snapshot times must lie in [0, T]")
    x0 = _complex_vector(raw["x0"], "x0") if raw["x0"] is not None else None
    disp = _complex_matrix(raw["dispersion"], "dispersion") if raw["dispersion"] is not None else None
    if raw["scheme"] not in ("auto", "euler", "splitting"):
        raise ConfigError(f"unknown scheme {raw['scheme']!r}")
    return ExperimentConfig(
        raw=raw, model_key=str(model["key"]), model_params=dict(model.get("params") or {}),
        eps=eps, T=T, dtau=dtau, dtau_averaged=dtau_avg, N=N, seed=seed, snapshots=snaps,
        systems=systems, x0=x0, dispersion=disp, quadrature=raw["quadrature"],
        scheme=raw["scheme"], workers=workers, output=str(raw["output"]),
        exit=raw["exit"], stationary=raw["stationary"], check=dict(raw["check"] or {}),
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"malformed YAML: {err}") from None
    return parse_config(data)


# ---------------------------------------------------------------------------
# experiment plumbing
# ---------------------------------------------------------------------------

def system_seed(master: int, system: str, eps_index: int = 0) -> int:
    """Independent 64-bit seed per compared system."""
    state = np.random.SeedSequence([master, SYSTEM_IDS[system], eps_index]).generate_state(1, np.uint64)
    return int(state[0])


class Experiment:
    """Model, quadrature and equation bundles resolved from a config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        try:
            self.model = build_model(cfg.model_key, cfg.model_params)
            if cfg.dispersion is not None:
                if cfg.dispersion.shape[0] != self.model.n:
                    raise ConfigError(f"dispersion needs {self.model.n} rows")
                self.model.B = DispersionField(cfg.dispersion)
            q = cfg.quadrature
            self.rule = (default_quadrature(self.model.n) if q is None
                         else make_quadrature(self.model.n, int(q.get("M", 32)),
                                              q.get("kind", "tensor"), int(q.get("seed", 0))))
        except (ValueError, TypeError) as err:
            raise ConfigError(str(err)) from None
        x0 = cfg.x0 if cfg.x0 is not None else np.full(self.model.n, 0.5 + 0.0j)
        if x0.shape != (self.model.n,):
            raise ConfigError(f"x0 needs {self.model.n} entries")
        self.x0 = x0
        self._bundles: dict = {}

    def bundle(self, eps: float):
        if eps not in self._bundles:
            self._bundles[eps] = build_bundle(self.model.H, self.model.P, self.model.B, eps, self.rule)
        return self._bundles[eps]

    def path_config(self, system: str, seed: int, T: Optional[float] = None) -> PathConfig:
        dt = self.cfg.dtau if system == "full" else self.cfg.dtau_averaged
        scheme = self.cfg.scheme if system == "full" else "auto"
        return PathConfig(dtau=dt, T=self.cfg.T if T is None else T, seed=seed, scheme=scheme)

    def initial_state(self, system: str, x0=None):
        x0 = self.x0 if x0 is None else x0
        return 0.5 * np.abs(x0) ** 2 if system == "averaged_action" else x0

    def ensemble(self, system: str, eps_index: int = 0, N: Optional[int] = None):
        eps = self.cfg.eps[eps_index]
        b = self.bundle(eps)
        sysobj = b.system("full" if system == "full" else system)
        seed = system_seed(self.cfg.seed, system, eps_index if system == "full" else 0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EnsembleWarning)
            ens = run_ensemble(sysobj, self.initial_state(system), N or self.cfg.N,
                               self.path_config(system, seed), self.cfg.snapshots,
                               workers=self.cfg.workers)
        if ens.divergence_fraction > DIVERGENCE_LIMIT:
            raise NumericalFailure(f"{system}: {ens.diverged_count}/{ens.N} paths diverged")
        return ens, seed

    def deterministic_csv(self) -> str:
        ode = self.bundle(self.cfg.eps[0]).deterministic_avg
        times, states = ode.integrate(0.5 * np.abs(self.x0) ** 2, self.cfg.T, self.cfg.dtau_averaged)
        idx = np.rint(np.asarray(self.cfg.snapshots) / self.cfg.dtau_averaged).astype(int)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path_id", "tau", "coordinate", "value"])
        for j in idx:
            for k in range(states.shape[1]):
                w.writerow([0, repr(float(times[j])), k, repr(float(states[j, k]))])
        return buf.getvalue()

    def metadata(self, command: str, **extra) -> dict:
        return {"command": command, "master_seed": self.cfg.seed, "code_version": __version__,
                "kernel_backend": backend(), "config": self.cfg.resolved(), **extra}


def _out_path(out: str, name: str) -> str:
    return f"{out.rstrip('/')}/{name}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig) -> dict:
    """Run the requested systems and write one snapshot CSV per run.

    The metadata summary holds, per snapshot, the distance to the exponential
    law for OU models and the pairwise distances between all ensembles.
    """
    exp = Experiment(cfg)
    runs, summary, ensembles = [], {}, {}
    stiff_eps = range(len(cfg.eps)) if "full" in cfg.systems else []
    for j in stiff_eps:
        ens, seed = exp.ensemble("full", j)
        name = "full.csv" if len(cfg.eps) == 1 else f"full_eps{j}.csv"
        atomic_write(_out_path(cfg.output, name), ensemble_csv(ens))
        runs.append({"file": name, "system": "full", "eps": cfg.eps[j], "seed": seed,
                     "diverged": ens.diverged_count})
        ensembles[name] = ens
        if exp.model.ou is not None:
            summary.setdefault("ou_law", {})[name] = _ou_summary(ens, exp.model.ou)
    for system in cfg.systems:
        if system == "full":
            continue
        name = f"{system}.csv"
        if system == "deterministic":
            atomic_write(_out_path(cfg.output, name), exp.deterministic_csv())
            runs.append({"file": name, "system": system})
            continue
        ens, seed = exp.ensemble(system)
        atomic_write(_out_path(cfg.output, name), ensemble_csv(ens))
        runs.append({"file": name, "system": system, "seed": seed, "diverged": ens.diverged_count})
        ensembles[name] = ens
    if len(ensembles) > 1:
        summary["pairwise"] = _pairwise(ensembles)
    if cfg.stationary is not None:
        summary["stationary"] = _stationary(exp)
    meta = exp.metadata("simulate", runs=runs, summary=summary)
    atomic_write(_out_path(cfg.output, "metadata.json"), to_json(meta))
    return meta


def _pairwise(ensembles: dict) -> list:
    names = list(ensembles)
    rows = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            for tau in ensembles[a].times:
                if tau <= 0:
                    continue
                da = action_distribution(ensembles[a], tau)
                db = action_distribution(ensembles[b], tau)
                rows.append({"a": a, "b": b, "tau": float(tau),
                             "distance": wasserstein1(da, db).per_coordinate,
                             "floor": noise_floor(da, db)})
    return rows


def _ou_summary(ens, ou) -> list:
    """Distance of each snapshot to the exponential stationary action law."""
    means = ou.b ** 2 / (2 * ou.nu)
    rows = []
    for tau in ens.times:
        if tau <= 0:
            continue
        d = action_distribution(ens, tau)
        dist = wasserstein1_exponential(d, means).per_coordinate
        floor = noise_floor(d)
        tol = np.maximum(0.1 * means, 3 * floor)
        rows.append({"tau": float(tau), "distance": dist, "floor": floor, "tolerance": tol,
                     "within": bool(np.all(dist <= tol))})
    return rows


def _stationary(exp: Experiment) -> dict:
    st = exp.cfg.stationary
    system = st.get("system", "effective")
    if system not in ("full", "effective", "effective_modified", "averaged_action"):
        raise ConfigError(f"stationary.system {system!r} is not a stochastic system")
    starts = st.get("x0_list")
    if not starts or len(starts) != 2:
        raise ConfigError("stationary.x0_list needs exactly two initial states")
    burn_in, T = float(st.get("burn_in", 5.0)), float(st.get("T", exp.cfg.T))
    N = int(st.get("N", exp.cfg.N))
    sysobj = exp.bundle(exp.cfg.eps[0]).system(system)
    ests = []
    for i, raw in enumerate(starts):
        x0 = _complex_vector(raw, "stationary.x0_list")
        seed = system_seed(exp.cfg.seed, system, 100 + i)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EnsembleWarning)
            ests.append(stationary_estimate(sysobj, exp.initial_state(system, x0), burn_in, T, N,
                                            exp.path_config(system, seed, T),
                                            int(st.get("samples_per_path", 8))))
    a, b = ests[0].distribution, ests[1].distribution
    dist = wasserstein1(a, b).per_coordinate
    floor = noise_floor(a, b)
    return {"system": system, "distance": dist, "floor": floor,
            "within": bool(np.all(dist <= 2 * floor)),
            "stationary": [e.stationary for e in ests]}


def _non_monotone(values: np.ndarray, floors: np.ndarray) -> list:
    """Indices ``j`` where ``values[j] > values[j-1] + 2 * floors[j]``."""
    return [j for j in range(1, len(values)) if values[j] > values[j - 1] + 2 * floors[j]]


def cmd_sweep(cfg: ExperimentConfig) -> dict:
    """Full system at each eps against one effective ensemble."""
    if len(cfg.eps) < 3:
        raise ConfigError("sweep needs at least 3 eps values")
    if cfg.N < MIN_COMPARISON_N:
        raise ConfigError(f"comparison runs need N >= {MIN_COMPARISON_N}")
    reference = cfg.raw.get("systems", ["effective"])
    reference = [s for s in reference if s not in ("full", "deterministic")] or ["effective"]
    ref_name = reference[0]
    exp = Experiment(cfg)
    order = np.argsort(cfg.eps)[::-1]  # largest eps first
    ref, ref_seed = exp.ensemble(ref_name)
    taus = [t for t in cfg.snapshots if t > 0]
    dist = np.empty((len(order), len(taus), exp.model.n))
    floor = np.empty_like(dist)
    seeds = []
    for row, j in enumerate(order):
        ens, seed = exp.ensemble("full", int(j))
        seeds.append(seed)
        for c, tau in enumerate(taus):
            d_full, d_ref = action_distribution(ens, tau), action_distribution(ref, tau)
            dist[row, c] = wasserstein1(d_full, d_ref).per_coordinate
            floor[row, c] = noise_floor(d_full, d_ref)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "tau", "coordinate", "distance", "floor"])
    for row, j in enumerate(order):
        for c, tau in enumerate(taus):
            for k in range(exp.model.n):
                w.writerow([repr(cfg.eps[j]), repr(float(tau)), k,
                            repr(float(dist[row, c, k])), repr(float(floor[row, c, k]))])
    atomic_write(_out_path(cfg.output, "sweep.csv"), buf.getvalue())
    flags = []
    for c, tau in enumerate(taus):
        for k in range(exp.model.n):
            bad = _non_monotone(dist[:, c, k], floor[:, c, k])
            final_ok = bool(dist[-1, c, k] <= 2 * floor[-1, c, k])
            flags.append({"tau": float(tau), "coordinate": k,
                          "non_monotone_at_eps": [cfg.eps[order[i]] for i in bad],
                          "final_within_2_floor": final_ok})
    meta = exp.metadata("sweep", reference=ref_name, reference_seed=ref_seed,
                        eps_order=[cfg.eps[j] for j in order], full_seeds=seeds, flags=flags,
                        passed=all(not f["non_monotone_at_eps"] and f["final_within_2_floor"]
                                   for f in flags))
    atomic_write(_out_path(cfg.output, "sweep.json"), to_json(meta))
    return meta


def cmd_exit_times(cfg: ExperimentConfig) -> dict:
    """Exit-time CDF of the full system from the polydisc ``|v_j| <= C_j``."""
    ex = cfg.exit
    if not ex or "box" not in ex:
        raise ConfigError("exit-times needs an 'exit' block with 'box'")
    exp = Experiment(cfg)
    try:
        box = DomainBox(np.asarray(ex["box"], dtype=float))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"exit.box: {err}") from None
    system = ex.get("system", "full")
    if system not in ("full", "effective", "effective_modified", "averaged_action"):
        raise ConfigError(f"exit.system {system!r} is not a stochastic system")
    window = tuple(float(x) for x in ex.get("window", (0.01, 0.5)))
    seed = system_seed(cfg.seed, system)
    sysobj = exp.bundle(cfg.eps[0]).system(system)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", EnsembleWarning)
            rep = exit_time_stats(sysobj, exp.initial_state(system), box, cfg.N,
                                  exp.path_config(system, seed), window=window)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    for wmsg in caught:
        print(f"warning: {wmsg.message}", file=sys.stderr)
    atomic_write(_out_path(cfg.output, "exit_cdf.csv"), exit_csv(rep))
    fit = {"exits": rep.exits, "N": cfg.N, "exponent": rep.exponent, "constant": rep.constant,
           "max_ratio_sqrt": rep.max_ratio_sqrt, "fit_window": list(rep.fit_window),
           "reliable": rep.reliable, "note": rep.note, "seed": seed}
    meta = exp.metadata("exit-times", fit=fit)
    atomic_write(_out_path(cfg.output, "exit_fit.json"), to_json(meta))
    return meta


def _status(ok: bool, fail: bool = False) -> str:
    return "pass" if ok else ("fail" if fail else "warn")


def cmd_check(cfg: ExperimentConfig) -> dict:
    """Probe the standing assumptions on samples; report only."""
    exp = Experiment(cfg)
    m, opts = exp.model, cfg.check
    rng = np.random.default_rng(int(opts.get("seed", cfg.seed)))
    n_samples = int(opts.get("samples", 200))
    radius = float(opts.get("radius", 3.0))
    v = (rng.normal(size=(n_samples, m.n)) + 1j * rng.normal(size=(n_samples, m.n))) * radius / 2
    I = 0.5 * np.abs(v) ** 2
    report = {}

    res = resonance_scan(m.H, I, int(opts.get("resonance_order", 4)),
                         float(opts.get("resonance_threshold", 1e-6)))
    report["A1_nondegeneracy"] = {"status": _status(res.ok),
                                  "min_ratio": float(np.min(res.min_ratio)),
                                  "near_resonant_samples": len(res.near_resonant)}

    # local Lipschitz / polynomial growth: log-log slope of |P| on expanding shells
    radii = np.geomspace(1.0, 100.0, 5)
    shell = v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-300)
    with np.errstate(all="ignore"):
        growth = [np.max(np.linalg.norm(m.P(r * shell), axis=-1)) for r in radii]
    finite = bool(np.all(np.isfinite(growth)))
    degree = float(np.polyfit(np.log(radii), np.log(np.maximum(growth, 1e-300)), 1)[0]) if finite else None
    report["A2_regularity"] = {"status": _status(finite, fail=True), "growth_degree": degree}

    rank = check_rank(m.B, v)
    report["A4_rank"] = {"status": _status(rank.ok, fail=True),
                         "min_sigma": float(np.min(rank.sigma_min)), "flagged": len(rank.flagged)}

    alpha1 = float(opts.get("alpha1", 1.0))
    alpha2 = float(opts.get("alpha2", 1.0))
    coerc = check_coercivity(m.P, v, alpha1, alpha2)

    T = float(opts.get("moment_T", 4.0))
    N = int(opts.get("moment_N", 1000))
    sysobj = exp.bundle(cfg.eps[0]).full
    probe_cfg = PathConfig(dtau=cfg.dtau, T=T, seed=system_seed(cfg.seed, "full", 999),
                           scheme=cfg.scheme)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EnsembleWarning)
        # skip the relaxation transient: the trend is read on the second half only
        ens = run_ensemble(sysobj, exp.x0, N, probe_cfg, np.linspace(0.5 * T, T, 5))
    mom = moment_report(ens)
    bounded = ens.divergence_fraction <= DIVERGENCE_LIMIT and bool(np.all(np.isfinite(mom.moments)))
    report["A3_moments"] = {"status": _status(bounded and not mom.growth),
                            "diverged": ens.diverged_count, "slopes": mom.slopes}
    report["A5_uniform_moments"] = {"status": _status(coerc.ok and not mom.growth),
                                    "coercivity_excess": coerc.worst,
                                    "alpha1": alpha1, "alpha2": alpha2,
                                    "bounded_dispersion": bool(m.B.is_constant)}
    report.update(_diagnostics(exp, rng))
    meta = exp.metadata("check", report=report)
    atomic_write(_out_path(cfg.output, "check.json"), to_json(meta))
    return meta


def _diagnostics(exp: Experiment, rng: np.random.Generator) -> dict:
    """Numerical hygiene and averaging identities on random interior points."""
    m, out = exp.model, {}
    I = rng.uniform(0.1, 2.0, size=(20, m.n))
    gerr = check_gradient(lambda x: np.asarray(m.H.H(x), dtype=float), m.H.gradH, I)
    out["gradient_H"] = {"status": _status(gerr <= GRADIENT_TOL, fail=True), "max_rel_error": gerr}

    v = np.sqrt(2 * I) * np.exp(1j * rng.uniform(0, 2 * np.pi, size=I.shape))
    back = from_action_angle(to_action_angle(v))
    rt = float(np.max(np.abs(back - v) / np.maximum(1.0, np.abs(v))))
    out["round_trip"] = {"status": _status(rt <= ROUND_TRIP_TOL, fail=True), "max_error": rt}

    if m.B.is_constant:
        # quadratic-variation form: b_k^2 = sum_j |B_kj|^2
        b = np.sqrt(np.sum(np.abs(m.B.matrix) ** 2, axis=1))
        errs = []
        for row in I:
            root = average_action_coefficients(m.P, m.B, row, exp.rule)[1].root
            target = np.diag(b * np.sqrt(2 * row))
            errs.append(np.max(np.abs(root - target)) / np.max(np.abs(target)))
        err = float(max(errs))
        out["constant_B_identity"] = {"status": _status(err <= IDENTITY_TOL, fail=True),
                                      "max_rel_error": err}
    dets = []
    for k in range(m.n):
        edge = I[:5].copy()
        edge[:, k] = 0.0
        for row in edge:
            dets.append(abs(np.linalg.det(average_action_coefficients(m.P, m.B, row, exp.rule)[1].K)))
    worst = float(max(dets))
    out["boundary_degeneracy"] = {"status": _status(worst <= BOUNDARY_DET_TOL, fail=True),
                                  "max_abs_det": worst}
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "exit-times": cmd_exit_times,
    "check": cmd_check,
}


def _print_result(command: str, meta: dict, out: str) -> None:
    if command == "check":
        for name, item in meta["report"].items():
            print(f"{name:22s} {item['status']}")
    elif command == "sweep":
        print(f"sweep {'passed' if meta['passed'] else 'flagged'}; table in {out}/sweep.csv")
    elif command == "exit-times":
        fit = meta["fit"]
        p = "n/a" if fit["exponent"] is None else f"{fit['exponent']:.3f}"
        print(f"exits {fit['exits']}/{fit['N']}  exponent {p}  {fit['note']}".rstrip())
    else:
        files = [r["file"] for r in meta["runs"]] + ["metadata.json"]
        print(f"wrote {', '.join(files)} to {out}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="stochavg", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", help="YAML experiment configuration")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.output = args.out
        with np.errstate(over="ignore", invalid="ignore"):
            meta = COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    if not args.quiet:
        _print_result(args.command, meta, cfg.output)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
