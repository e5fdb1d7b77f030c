"""SDOF ground-truth simulators: linear oscillator and Bouc-Wen hysteresis.

Both models are written per unit mass::

    x'' + (c/m) x' + r = -ag(t)

with ``r = (k/m) x`` for the linear model and, for Bouc-Wen, the specific
restoring force ``r`` evolving as

    r' = (k/m) x' - alpha |x'| |r|^(n-1) r - beta x' |r|^n

Physical restoring forces (N) reported to callers are ``m * r``.

The integrators are vectorised over a leading sample axis so a whole dataset
split can be simulated in one time loop; the single-record functions are thin
wrappers around them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import InvalidConfig, NonFinite

if TYPE_CHECKING:
    from .excitation import GroundMotion

#: Simulations are aborted when |x| exceeds this bound (m).
DIVERGENCE_LIMIT = 1.0e3


@dataclass(frozen=True)
class DampingSpec:
    """Viscous damping, either as a ratio of critical or Rayleigh ``c = a*m + b*k``."""

    kind: str = "ratio"
    zeta: float = 0.05
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind == "ratio":
            if not 0.0 <= self.zeta < 1.0:
                raise InvalidConfig(f"damping ratio must lie in [0, 1), got {self.zeta}", "damping.zeta")
        elif self.kind == "rayleigh":
            if self.alpha < 0 or self.beta < 0:
                raise InvalidConfig("Rayleigh coefficients must be non-negative", "damping")
        else:
            raise InvalidConfig(f"unknown damping kind {self.kind!r}", "damping.kind")

    @classmethod
    def ratio(cls, zeta: float) -> "DampingSpec":
        return cls(kind="ratio", zeta=zeta)

    @classmethod
    def rayleigh(cls, alpha: float, beta: float) -> "DampingSpec":
        return cls(kind="rayleigh", zeta=0.0, alpha=alpha, beta=beta)

    def to_dict(self) -> dict:
        if self.kind == "ratio":
            return {"kind": "ratio", "zeta": self.zeta}
        return {"kind": "rayleigh", "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "DampingSpec":
        if d.get("kind", "ratio") == "ratio":
            return cls.ratio(float(d.get("zeta", 0.05)))
        return cls.rayleigh(float(d.get("alpha", 0.0)), float(d.get("beta", 0.0)))


@dataclass(frozen=True)
class BoucWenParams:
    alpha: float = 1.0
    beta: float = 2.0
    n: float = 3.0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidConfig(f"Bouc-Wen exponent n must be >= 1, got {self.n}", "bouc_wen.n")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidConfig("Bouc-Wen alpha and beta must be non-negative", "bouc_wen")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "n": self.n}


@dataclass(frozen=True)
class StructureParams:
    """One SDOF system. ``model=None`` selects the linear restoring force."""

    mass: float
    stiffness: float
    damping: DampingSpec = field(default_factory=DampingSpec)
    model: BoucWenParams | None = None

    def __post_init__(self):
        if not (self.mass > 0 and math.isfinite(self.mass)):
            raise InvalidConfig(f"mass must be positive, got {self.mass}", "structure.mass")
        if not (self.stiffness > 0 and math.isfinite(self.stiffness)):
            raise InvalidConfig(f"stiffness must be positive, got {self.stiffness}", "structure.stiffness")

    @property
    def is_linear(self) -> bool:
        return self.model is None

    @property
    def key(self) -> tuple[float, float]:
        """(stiffness, mass) tuple identifying the structure in reports."""
        return (self.stiffness, self.mass)

    def to_dict(self) -> dict:
        return {
            "mass": self.mass,
            "stiffness": self.stiffness,
            "damping": self.damping.to_dict(),
            "model": "linear" if self.model is None else {"bouc_wen": self.model.to_dict()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StructureParams":
        model = d.get("model", "linear")
        bw = None if model == "linear" else BoucWenParams(**model["bouc_wen"])
        return cls(
            mass=float(d["mass"]),
            stiffness=float(d["stiffness"]),
            damping=DampingSpec.from_dict(d.get("damping", {})),
            model=bw,
        )


@dataclass(frozen=True)
class InitialConditions:
    x0: float = 0.0
    v0: float = 0.0
    f0: float = 0.0  # restoring force in N, Bouc-Wen only


@dataclass
class ResponseSeries:
    dt: float
    displacement: np.ndarray
    velocity: np.ndarray | None = None
    restoring_force: np.ndarray | None = None

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self.displacement)) * self.dt

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "displacement_m"])
            for t, x in zip(self.time, self.displacement):
                w.writerow([repr(float(t)), repr(float(x))])


def natural_frequency(s: StructureParams) -> float:
    """Undamped natural frequency in Hz."""
    return math.sqrt(s.stiffness / s.mass) / (2.0 * math.pi)


def damping_coefficient(s: StructureParams) -> float:
    d = s.damping
    if d.kind == "ratio":
        return 2.0 * d.zeta * math.sqrt(s.stiffness * s.mass)
    return d.alpha * s.mass + d.beta * s.stiffness


def saturation_force(s: StructureParams) -> float:
    """Bouc-Wen ultimate restoring force (N) reached under monotonic loading."""
    if s.model is None:
        return math.inf
    bw = s.model
    if bw.alpha + bw.beta <= 0:
        return math.inf
    return s.mass * ((s.stiffness / s.mass) / (bw.alpha + bw.beta)) ** (1.0 / bw.n)


# ---------------------------------------------------------------------------
# vectorised integrators; all arrays carry a leading sample axis of length N


def _interp_weights(substeps: int) -> np.ndarray:
    return np.arange(substeps + 1) / substeps


def _check_substeps(substeps: int, dt: float) -> None:
    if int(substeps) != substeps or substeps < 1:
        raise InvalidConfig(f"substeps must be a positive integer, got {substeps}", "simulator.substeps")
    if not dt > 0:
        raise InvalidConfig(f"dt must be positive, got {dt}", "dt")


def _newmark(m, c, k, ag, dt, substeps, x0, v0, gamma=0.5, beta=0.25):
    n_samples, n_steps = ag.shape
    h = dt / substeps
    a0 = 1.0 / (beta * h * h)
    a1 = gamma / (beta * h)
    a2 = 1.0 / (beta * h)
    a3 = 1.0 / (2.0 * beta) - 1.0
    a4 = gamma / beta - 1.0
    a5 = h * (gamma / (2.0 * beta) - 1.0)
    k_eff = k + a0 * m + a1 * c

    x = np.empty((n_samples, n_steps))
    v = np.empty((n_samples, n_steps))
    u = np.array(x0, dtype=float) * np.ones(n_samples)
    ud = np.array(v0, dtype=float) * np.ones(n_samples)
    udd = (-m * ag[:, 0] - c * ud - k * u) / m
    x[:, 0] = u
    v[:, 0] = ud
    valid = np.isfinite(u) & (np.abs(u) <= DIVERGENCE_LIMIT)
    w = _interp_weights(substeps)
    for i in range(n_steps - 1):
        g0 = ag[:, i]
        dg = ag[:, i + 1] - g0
        for j in range(1, substeps + 1):
            p = -m * (g0 + dg * w[j])
            peff = p + m * (a0 * u + a2 * ud + a3 * udd) + c * (a1 * u + a4 * ud + a5 * udd)
            u_new = peff / k_eff
            udd_new = a0 * (u_new - u) - a2 * ud - a3 * udd
            ud = ud + h * ((1.0 - gamma) * udd + gamma * udd_new)
            u = u_new
            udd = udd_new
        bad = ~(np.abs(u) <= DIVERGENCE_LIMIT)
        if bad.any():
            valid &= ~bad
            u[bad] = ud[bad] = udd[bad] = 0.0
        x[:, i + 1] = u
        v[:, i + 1] = ud
    x[~valid] = np.nan
    v[~valid] = np.nan
    return x, v, valid


def _rk4_linear(m, c, k, ag, dt, substeps, x0, v0):
    n_samples, n_steps = ag.shape
    h = dt / substeps
    cm = c / m
    km = k / m
    x = np.empty((n_samples, n_steps))
    v = np.empty((n_samples, n_steps))
    u = np.array(x0, dtype=float) * np.ones(n_samples)
    ud = np.array(v0, dtype=float) * np.ones(n_samples)
    x[:, 0] = u
    v[:, 0] = ud
    valid = np.isfinite(u) & (np.abs(u) <= DIVERGENCE_LIMIT)
    w = _interp_weights(2 * substeps)
    for i in range(n_steps - 1):
        g0 = ag[:, i]
        dg = ag[:, i + 1] - g0
        for j in range(substeps):
            ga = g0 + dg * w[2 * j]
            gm = g0 + dg * w[2 * j + 1]
            gb = g0 + dg * w[2 * j + 2]
            k1x = ud
            k1v = -ga - cm * ud - km * u
            k2x = ud + 0.5 * h * k1v
            k2v = -gm - cm * k2x - km * (u + 0.5 * h * k1x)
            k3x = ud + 0.5 * h * k2v
            k3v = -gm - cm * k3x - km * (u + 0.5 * h * k2x)
            k4x = ud + h * k3v
            k4v = -gb - cm * k4x - km * (u + h * k3x)
            u = u + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            ud = ud + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        bad = ~(np.abs(u) <= DIVERGENCE_LIMIT)
        if bad.any():
            valid &= ~bad
            u[bad] = ud[bad] = 0.0
        x[:, i + 1] = u
        v[:, i + 1] = ud
    x[~valid] = np.nan
    v[~valid] = np.nan
    return x, v, valid


def _bw_rate(v, r, km, alpha, beta, n):
    ar = np.abs(r)
    arn1 = ar ** (n - 1.0)
    return km * v - alpha * np.abs(v) * arn1 * r - beta * v * arn1 * ar


def _rk4_bouc_wen(m, c, k, alpha, beta, n, ag, dt, substeps, x0, v0, r0):
    n_samples, n_steps = ag.shape
    h = dt / substeps
    cm = c / m
    km = k / m
    x = np.empty((n_samples, n_steps))
    v = np.empty((n_samples, n_steps))
    f = np.empty((n_samples, n_steps))
    u = np.array(x0, dtype=float) * np.ones(n_samples)
    ud = np.array(v0, dtype=float) * np.ones(n_samples)
    r = np.array(r0, dtype=float) * np.ones(n_samples)
    x[:, 0] = u
    v[:, 0] = ud
    f[:, 0] = r
    valid = np.isfinite(u) & (np.abs(u) <= DIVERGENCE_LIMIT)
    w = _interp_weights(2 * substeps)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps - 1):
            g0 = ag[:, i]
            dg = ag[:, i + 1] - g0
            for j in range(substeps):
                ga = g0 + dg * w[2 * j]
                gm = g0 + dg * w[2 * j + 1]
                gb = g0 + dg * w[2 * j + 2]
                k1x = ud
                k1v = -ga - cm * ud - r
                k1r = _bw_rate(ud, r, km, alpha, beta, n)
                v2 = ud + 0.5 * h * k1v
                r2 = r + 0.5 * h * k1r
                k2x = v2
                k2v = -gm - cm * v2 - r2
                k2r = _bw_rate(v2, r2, km, alpha, beta, n)
                v3 = ud + 0.5 * h * k2v
                r3 = r + 0.5 * h * k2r
                k3x = v3
                k3v = -gm - cm * v3 - r3
                k3r = _bw_rate(v3, r3, km, alpha, beta, n)
                v4 = ud + h * k3v
                r4 = r + h * k3r
                k4x = v4
                k4v = -gb - cm * v4 - r4
                k4r = _bw_rate(v4, r4, km, alpha, beta, n)
                u = u + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
                ud = ud + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
                r = r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
            bad = ~((np.abs(u) <= DIVERGENCE_LIMIT) & np.isfinite(ud) & np.isfinite(r))
            if bad.any():
                valid &= ~bad
                u[bad] = ud[bad] = r[bad] = 0.0
            x[:, i + 1] = u
            v[:, i + 1] = ud
            f[:, i + 1] = r
    x[~valid] = np.nan
    v[~valid] = np.nan
    f[~valid] = np.nan
    return x, v, f, valid


def _structure_arrays(structures: Sequence[StructureParams]):
    m = np.array([s.mass for s in structures], dtype=float)
    k = np.array([s.stiffness for s in structures], dtype=float)
    c = np.array([damping_coefficient(s) for s in structures], dtype=float)
    return m, c, k


def simulate_many(
    structures: Sequence[StructureParams],
    accel: np.ndarray,
    dt: float,
    substeps: int = 10,
    method: str = "newmark",
    ic: InitialConditions | None = None,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Simulate N (structure, record) pairs at once.

    ``accel`` has shape (N, T). Returns ``(displacement, restoring_force,
    valid)``; rows of diverged samples are NaN and flagged False in ``valid``.
    Restoring force is ``None`` for linear structures. All structures must
    share one constitutive model kind.
    """
    _check_substeps(substeps, dt)
    accel = np.atleast_2d(np.asarray(accel, dtype=float))
    if accel.shape[0] != len(structures):
        raise InvalidConfig("one acceleration row is required per structure")
    ic = ic or InitialConditions()
    kinds = {s.is_linear for s in structures}
    if len(kinds) != 1:
        raise InvalidConfig("simulate_many needs structures of a single model kind")
    m, c, k = _structure_arrays(structures)

    if structures[0].is_linear:
        if method == "newmark":
            x, _, valid = _newmark(m, c, k, accel, dt, substeps, ic.x0, ic.v0)
        elif method == "rk4":
            x, _, valid = _rk4_linear(m, c, k, accel, dt, substeps, ic.x0, ic.v0)
        else:
            raise InvalidConfig(f"unknown linear integrator {method!r}", "simulator.method")
        return x, None, valid

    alpha = np.array([s.model.alpha for s in structures])
    beta = np.array([s.model.beta for s in structures])
    n = np.array([s.model.n for s in structures])
    x, _, r, valid = _rk4_bouc_wen(
        m, c, k, alpha, beta, n, accel, dt, substeps, ic.x0, ic.v0, ic.f0 / m
    )
    return x, r * m[:, None], valid


def simulate_linear(
    s: StructureParams,
    gm: "GroundMotion",
    ic: InitialConditions | None = None,
    substeps: int = 10,
    method: str = "newmark",
) -> ResponseSeries:
    """Linear SDOF response, Newmark average acceleration by default.

    ``method="rk4"`` switches to classical Runge-Kutta on the same substep grid,
    which makes the result directly comparable with :func:`simulate_bouc_wen`.
    """
    if not s.is_linear:
        raise InvalidConfig("simulate_linear requires a linear structure", "structure.model")
    ic = ic or InitialConditions()
    _check_substeps(substeps, gm.dt)
    m, c, k = _structure_arrays([s])
    ag = np.asarray(gm.accel, dtype=float)[None, :]
    if method == "newmark":
        x, v, valid = _newmark(m, c, k, ag, gm.dt, substeps, ic.x0, ic.v0)
    elif method == "rk4":
        x, v, valid = _rk4_linear(m, c, k, ag, gm.dt, substeps, ic.x0, ic.v0)
    else:
        raise InvalidConfig(f"unknown linear integrator {method!r}", "simulator.method")
    if not valid[0]:
        raise NonFinite(f"linear simulation diverged for {s.key} under record {gm.id!r}")
    return ResponseSeries(dt=gm.dt, displacement=x[0], velocity=v[0])


def simulate_bouc_wen(
    s: StructureParams,
    gm: "GroundMotion",
    ic: InitialConditions | None = None,
    substeps: int = 10,
) -> ResponseSeries:
    if s.is_linear:
        raise InvalidConfig("simulate_bouc_wen requires Bouc-Wen parameters", "structure.model")
    ic = ic or InitialConditions()
    _check_substeps(substeps, gm.dt)
    m, c, k = _structure_arrays([s])
    bw = s.model
    ag = np.asarray(gm.accel, dtype=float)[None, :]
    x, v, r, valid = _rk4_bouc_wen(
        m, c, k, bw.alpha, bw.beta, bw.n, ag, gm.dt, substeps, ic.x0, ic.v0, ic.f0 / s.mass
    )
    if not valid[0]:
        raise NonFinite(f"Bouc-Wen simulation diverged for {s.key} under record {gm.id!r}")
    return ResponseSeries(dt=gm.dt, displacement=x[0], velocity=v[0], restoring_force=r[0] * s.mass)


def pushover(
    s: StructureParams, displacement_path: Sequence[float], substeps: int = 20
) -> tuple[np.ndarray, np.ndarray]:
    """Displacement-controlled hysteresis curve.

    The restoring-force law is integrated in displacement along the prescribed
    path (RK4, ``substeps`` per path increment). Returns ``(x, force_N)``.
    """
    path = np.asarray(displacement_path, dtype=float)
    if path.ndim != 1 or path.size == 0 or not np.all(np.isfinite(path)):
        raise NonFinite("displacement path must be a finite 1-D sequence")
    if path[0] != 0.0:
        raise InvalidConfig("displacement path must start at 0", "displacement_path")
    if s.is_linear:
        return path.copy(), s.stiffness * path

    km = s.stiffness / s.mass
    bw = s.model

    def slope(r, sgn):
        ar = abs(r)
        return km - bw.alpha * sgn * ar ** (bw.n - 1.0) * r - bw.beta * ar**bw.n

    r = 0.0
    out = np.empty_like(path)
    out[0] = 0.0
    for i in range(1, path.size):
        dx = path[i] - path[i - 1]
        sgn = math.copysign(1.0, dx) if dx != 0 else 0.0
        h = dx / substeps
        for _ in range(substeps):
            k1 = slope(r, sgn)
            k2 = slope(r + 0.5 * h * k1, sgn)
            k3 = slope(r + 0.5 * h * k2, sgn)
            k4 = slope(r + h * k3, sgn)
            r += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not math.isfinite(r):
            raise NonFinite(f"pushover diverged at path index {i}")
        out[i] = r
    return path.copy(), out * s.mass
