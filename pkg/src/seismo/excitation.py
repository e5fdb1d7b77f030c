"""Ground-motion inputs: synthetic Kanai-Tajimi records, PGA scaling, CSV I/O
and pseudo-acceleration response spectra."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from . import dynamics
from .errors import InvalidConfig, NonUniformSampling, ParseError, ZeroRecord

G = 9.81  # m/s^2


@dataclass(frozen=True)
class GroundMotion:
    id: str
    dt: float
    accel: np.ndarray
    pga: float = field(init=False)

    def __post_init__(self):
        accel = np.asarray(self.accel, dtype=float)
        if not self.dt > 0:
            raise InvalidConfig(f"record {self.id!r}: dt must be positive", "dt")
        if accel.ndim != 1 or accel.size == 0:
            raise InvalidConfig(f"record {self.id!r}: acceleration must be a non-empty 1-D array")
        if not np.all(np.isfinite(accel)):
            raise InvalidConfig(f"record {self.id!r}: acceleration contains non-finite samples")
        accel.setflags(write=False)
        object.__setattr__(self, "accel", accel)
        object.__setattr__(self, "pga", float(np.max(np.abs(accel))))

    def __len__(self) -> int:
        return self.accel.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.accel.size) * self.dt

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "accel_m_s2"])
            for t, a in zip(self.time, self.accel):
                w.writerow([repr(float(t)), repr(float(a))])


@dataclass(frozen=True)
class KanaiTajimiParams:
    omega_g: float = 15.0
    zeta_g: float = 0.6
    rise_s: float = 2.0
    plateau_s: float = 16.0
    decay_s: float = 12.0
    noise_intensity: float = 0.01

    def __post_init__(self):
        if not self.omega_g > 0:
            raise InvalidConfig("omega_g must be positive", "excitation.kanai_tajimi.omega_g")
        if not 0 < self.zeta_g < 1:
            raise InvalidConfig("zeta_g must lie in (0, 1)", "excitation.kanai_tajimi.zeta_g")
        for name in ("rise_s", "plateau_s", "decay_s", "noise_intensity"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be non-negative", f"excitation.kanai_tajimi.{name}")


def _sample_count(duration: float, dt: float) -> int:
    if not (duration > 0 and dt > 0):
        raise InvalidConfig("duration and dt must be positive", "excitation.duration")
    n = duration / dt
    if abs(n - round(n)) > 1e-9 * max(n, 1.0):
        raise InvalidConfig(f"duration {duration} is not a multiple of dt {dt}", "excitation.duration")
    return int(round(n))


def trapezoid_envelope(t: np.ndarray, rise: float, plateau: float, decay: float) -> np.ndarray:
    env = np.zeros_like(t)
    if rise > 0:
        up = t < rise
        env[up] = t[up] / rise
    else:
        up = np.zeros_like(t, dtype=bool)
    flat = (t >= rise) & (t <= rise + plateau)
    env[flat] = 1.0
    if decay > 0:
        down = (t > rise + plateau) & (t < rise + plateau + decay)
        env[down] = 1.0 - (t[down] - rise - plateau) / decay
    return env


def generate_synthetic(
    params: KanaiTajimiParams | None = None,
    duration: float = 30.0,
    dt: float = 0.02,
    seed: int = 0,
) -> GroundMotion:
    """Kanai-Tajimi filtered white noise under a trapezoidal envelope.

    The stationary process is Gaussian white noise of two-sided intensity
    ``noise_intensity`` passed through the ground filter
    ``(2 zeta w s + w^2) / (s^2 + 2 zeta w s + w^2)`` (bilinear discretisation).
    The enveloped record is baseline corrected by removing its mean.
    """
    params = params or KanaiTajimiParams()
    n = _sample_count(duration, dt)
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(2.0 * math.pi * params.noise_intensity / dt)
    noise = rng.standard_normal(n) * sigma

    w, z = params.omega_g, params.zeta_g
    num, den, _ = signal.cont2discrete(([2 * z * w, w * w], [1.0, 2 * z * w, w * w]), dt, method="bilinear")
    filtered = signal.lfilter(np.ravel(num), np.ravel(den), noise)

    t = np.arange(n) * dt
    accel = filtered * trapezoid_envelope(t, params.rise_s, params.plateau_s, params.decay_s)
    accel = accel - accel.mean()
    return GroundMotion(id=f"syn-{seed}", dt=dt, accel=accel)


def scale_to_pga(gm: GroundMotion, target_pga: float) -> GroundMotion:
    """Rescale ``gm`` so its peak absolute acceleration equals ``target_pga`` (m/s^2)."""
    if gm.pga == 0:
        raise ZeroRecord(f"record {gm.id!r} has zero PGA and cannot be scaled")
    if not target_pga > 0:
        raise InvalidConfig(f"target PGA must be positive, got {target_pga}", "excitation.pga_levels_g")
    factor = target_pga / gm.pga
    return GroundMotion(id=gm.id, dt=gm.dt, accel=gm.accel * factor)


def scale_to_levels(gm: GroundMotion, levels_g: Sequence[float]) -> list[GroundMotion]:
    return [scale_to_pga(gm, lvl * G) for lvl in levels_g]


_DT_RE = re.compile(r"\bdt\s*[=:,]?\s*([-+0-9.eE]+)", re.IGNORECASE)


def _split(line: str) -> list[str]:
    if "," in line:
        return [c.strip() for c in line.split(",")]
    return line.split()


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path: str | Path, resample_dt: float | None = None) -> GroundMotion:
    """Read a ground-motion record.

    Two layouts are accepted: two numeric columns ``time_s, accel`` (an
    optional first header row of column names is skipped), or a single
    acceleration column preceded by a header line that states ``dt``
    (``# dt=0.01``, ``dt,0.01`` ...). Lines starting with ``#`` are comments.
    """
    path = Path(path)
    dt_header = None
    rows: list[tuple[int, list[str]]] = []
    header_seen = False
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _DT_RE.search(line)
                if m and dt_header is None:
                    dt_header = float(m.group(1))
                continue
            cells = _split(line)
            if not rows and not header_seen and not any(_is_float(c) for c in cells):
                header_seen = True
                m = _DT_RE.search(line)
                if m and dt_header is None:
                    dt_header = float(m.group(1))
                continue  # column-name header
            if not rows and cells and cells[0].lower() == "dt" and len(cells) == 2 and _is_float(cells[1]):
                dt_header = float(cells[1])
                continue
            rows.append((lineno, cells))

    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0][1])
    values = []
    for lineno, cells in rows:
        if len(cells) != width:
            raise ParseError(f"expected {width} columns, found {len(cells)}", lineno)
        try:
            values.append([float(c) for c in cells])
        except ValueError:
            bad = next(c for c in cells if not _is_float(c))
            raise ParseError(f"non-numeric cell {bad!r}", lineno) from None
    data = np.asarray(values)

    if width == 1:
        if dt_header is None:
            raise ParseError(f"{path}: single-column record needs a dt header line")
        dt = dt_header
        accel = data[:, 0]
    elif width == 2:
        t = data[:, 0]
        accel = data[:, 1]
        if t.size < 2:
            raise ParseError(f"{path}: need at least two samples to infer dt")
        steps = np.diff(t)
        dt = (t[-1] - t[0]) / (t.size - 1)
        if not dt > 0 or np.max(np.abs(steps - dt)) > 1e-6 * dt:
            raise NonUniformSampling(f"{path}: time column is not uniformly sampled")
    else:
        raise ParseError(f"{path}: expected 1 or 2 columns, found {width}", rows[0][0])

    if resample_dt is not None and abs(resample_dt - dt) > 1e-12 * dt:
        accel = resample(accel, dt, resample_dt)
        dt = resample_dt
    return GroundMotion(id=path.stem, dt=dt, accel=accel)


def resample(accel: np.ndarray, dt: float, new_dt: float) -> np.ndarray:
    """Linear-interpolation resampling onto a grid starting at t=0."""
    duration = (len(accel) - 1) * dt
    n_new = int(math.floor(duration / new_dt + 1e-9)) + 1
    t_old = np.arange(len(accel)) * dt
    t_new = np.arange(n_new) * new_dt
    return np.interp(t_new, t_old, accel)


def response_spectrum(
    gm: GroundMotion, periods: Sequence[float], zeta: float = 0.05, substeps: int = 10
) -> np.ndarray:
    """Pseudo-acceleration spectrum ``Sa = w^2 max|x|`` of unit-mass oscillators.

    Returns an array of shape (P, 2) with columns (period_s, Sa_m_s2).
    """
    periods = np.asarray(periods, dtype=float)
    if periods.ndim != 1 or np.any(periods <= 0):
        raise InvalidConfig("periods must be positive", "periods")
    omega = 2 * np.pi / periods
    structures = [
        dynamics.StructureParams(mass=1.0, stiffness=float(w * w), damping=dynamics.DampingSpec.ratio(zeta))
        for w in omega
    ]
    ag = np.broadcast_to(gm.accel, (len(periods), len(gm.accel)))
    x, _, valid = dynamics.simulate_many(structures, ag, gm.dt, substeps)
    if not valid.all():
        raise dynamics.NonFinite(f"spectrum oscillator diverged for record {gm.id!r}")
    sa = omega**2 * np.max(np.abs(x), axis=1)
    return np.column_stack([periods, sa])


def spectrum_to_csv(spectrum: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period_s", "Sa_m_s2"])
        for p, sa in spectrum:
            w.writerow([repr(float(p)), repr(float(sa))])
