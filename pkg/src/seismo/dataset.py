"""(record x structure) sample grids, channel normalisation and persistence."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dynamics
from .container import canonical_json, read_container, write_container
from .dynamics import BoucWenParams, DampingSpec, StructureParams, natural_frequency
from .errors import DegenerateChannel, InvalidConfig, SimulationFailure
from .excitation import G, GroundMotion

log = logging.getLogger(__name__)

# Structure grids of the linear-SDOF study: (stiffness kN/m, mass kg, reported Hz).
TABLE1 = [
    (30, 120, 2.52), (30, 140, 2.33), (30, 160, 2.18), (30, 200, 1.95), (30, 240, 1.78),
    (35, 120, 2.72), (35, 140, 2.52), (35, 160, 2.35), (35, 200, 2.11), (35, 240, 1.92),
    (40, 120, 2.91), (40, 140, 2.69), (40, 160, 2.52), (40, 200, 2.25), (40, 240, 2.05),
    (55, 120, 3.41), (55, 140, 3.15), (55, 160, 2.95), (55, 200, 2.63), (55, 240, 2.41),
    (65, 120, 3.70), (65, 140, 3.43), (65, 160, 3.21), (65, 200, 2.87), (65, 240, 2.62),
]
TABLE2 = [
    (20, 80, 2.52), (20, 100, 2.25), (20, 150, 1.84), (20, 180, 1.68),
    (20, 220, 1.52), (20, 260, 1.40), (20, 280, 1.35), (20, 300, 1.30),
    (25, 80, 2.81), (25, 100, 2.51), (25, 150, 2.05), (25, 180, 1.88),
    (25, 220, 1.70), (25, 260, 1.56), (25, 280, 1.50), (25, 300, 1.45),
    (38, 80, 3.47), (38, 100, 3.10), (38, 150, 2.53), (38, 180, 2.31),
    (38, 220, 2.09), (38, 260, 1.92), (38, 280, 1.85), (38, 300, 1.79),
    (50, 80, 3.98), (50, 100, 3.56), (50, 150, 2.91), (50, 180, 2.65),
    (50, 220, 2.40), (50, 260, 2.21), (50, 280, 2.13), (50, 300, 2.05),
    (60, 80, 4.36), (60, 100, 3.90), (60, 150, 3.18), (60, 180, 2.91),
    (60, 220, 2.63), (60, 260, 2.42), (60, 280, 2.33), (60, 300, 2.25),
    (75, 80, 4.87), (75, 100, 4.36), (75, 150, 3.56), (75, 180, 3.25),
    (75, 220, 2.94), (75, 260, 2.70), (75, 280, 2.60), (75, 300, 2.52),
    (90, 80, 5.34), (90, 100, 4.78), (90, 150, 3.90), (90, 180, 3.56),
    (90, 220, 3.21), (90, 260, 2.96), (90, 280, 2.85), (90, 300, 2.76),
    (100, 80, 5.63), (100, 100, 5.03), (100, 150, 4.11), (100, 180, 3.75),
    (100, 220, 3.39), (100, 260, 3.12), (100, 280, 3.01), (100, 300, 2.91),
]

PGA_LEVELS_G = (0.2, 0.4, 0.6, 0.8, 1.0)
CHUNK = 2048


@dataclass(frozen=True)
class SimSettings:
    model: str = "linear"
    damping: DampingSpec = field(default_factory=DampingSpec)
    substeps: int = 10
    method: str = "newmark"
    bouc_wen: BoucWenParams = field(default_factory=BoucWenParams)

    def __post_init__(self):
        if self.model not in ("linear", "bouc_wen"):
            raise InvalidConfig(f"unknown model {self.model!r}", "simulator.model")

    def structure(self, stiffness: float, mass: float) -> StructureParams:
        bw = self.bouc_wen if self.model == "bouc_wen" else None
        return StructureParams(mass=float(mass), stiffness=float(stiffness), damping=self.damping, model=bw)

    def to_dict(self) -> dict:
        d = {
            "model": self.model,
            "damping": self.damping.to_dict(),
            "substeps": self.substeps,
            "method": self.method if self.model == "linear" else "rk4",
            "units": "SI; Bouc-Wen law integrated per unit mass (specific restoring force)",
        }
        if self.model == "bouc_wen":
            d["bouc_wen"] = self.bouc_wen.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimSettings":
        return cls(
            model=d.get("model", "linear"),
            damping=DampingSpec.from_dict(d.get("damping", {})),
            substeps=int(d.get("substeps", 10)),
            method=d.get("method", "newmark") if d.get("model", "linear") == "linear" else "newmark",
            bouc_wen=BoucWenParams(**d.get("bouc_wen", {})),
        )


def grid(stiffness_kn: Iterable[float], mass_kg: Iterable[float]) -> list[tuple[float, float]]:
    """Cartesian (stiffness N/m, mass kg) grid from kN/m and kg axes."""
    return [(k * 1e3, m) for k in stiffness_kn for m in mass_kg]


def table_structures(table) -> list[tuple[float, float]]:
    return [(k * 1e3, m) for k, m, _ in table]


@dataclass
class Sample:
    gm_id: str
    pga: float
    structure: StructureParams
    input_gm: np.ndarray
    input_struct: np.ndarray
    target: np.ndarray
    raw_target: np.ndarray
    normalized: bool = False


@dataclass
class Dataset:
    """Immutable sample grid. Records are stored once and shared by index.

    ``records`` (R, T) holds PGA-scaled accelerations, ``structures`` the
    unique structure table, and each sample i pairs ``records[record_index[i]]``
    with ``structures[struct_index[i]]`` and displacement ``targets[i]``.
    """

    split: str
    dt: float
    record_ids: list[str]
    pga: np.ndarray
    records: np.ndarray
    structures: list[StructureParams]
    record_index: np.ndarray
    struct_index: np.ndarray
    targets: np.ndarray
    settings: SimSettings
    seed: int | None = None
    dropped: int = 0
    normalizer: "Normalizer | None" = None
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def seq_len(self) -> int:
        return self.records.shape[1]

    def struct_features(self) -> np.ndarray:
        """Raw (stiffness, mass) per sample, shape (N, 2)."""
        table = np.array([[s.stiffness, s.mass] for s in self.structures], dtype=float)
        return table[self.struct_index]

    def accel(self) -> np.ndarray:
        return self.records[self.record_index]

    def __getitem__(self, i: int) -> Sample:
        r = int(self.record_index[i])
        s = self.structures[int(self.struct_index[i])]
        return Sample(
            gm_id=self.record_ids[r],
            pga=float(self.pga[r]),
            structure=s,
            input_gm=self.records[r],
            input_struct=np.array([s.stiffness, s.mass]),
            target=self.targets[i],
            raw_target=self.targets[i],
        )

    def structure_keys(self) -> list[tuple[float, float]]:
        return [self.structures[int(j)].key for j in self.struct_index]

    @property
    def manifest(self) -> dict:
        n_rec = len(set(self.record_ids))
        levels = sorted({round(float(p) / G, 10) for p in self.pga})
        return {
            "split": self.split,
            "dt": self.dt,
            "seq_len": self.seq_len,
            "records": [
                {"id": rid, "pga_m_s2": float(p), "pga_g": float(p) / G}
                for rid, p in zip(self.record_ids, self.pga)
            ],
            "n_source_records": n_rec,
            "pga_levels_g": levels,
            "structures": [
                {"stiffness": s.stiffness, "mass": s.mass, "natural_frequency": natural_frequency(s)}
                for s in self.structures
            ],
            "simulator": self.settings.to_dict(),
            "normalizer": self.normalizer.to_dict() if self.normalizer else None,
            "seed": self.seed,
            "n_samples": len(self),
            "n_expected": len(self.record_ids) * len(self.structures),
            "n_dropped": self.dropped,
            **({"extra": self.extra} if self.extra else {}),
        }

    def manifest_hash(self) -> str:
        h = hashlib.sha256(canonical_json(self.manifest).encode())
        for arr in (self.records, self.targets, self.record_index, self.struct_index):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def with_normalizer(self, normalizer: "Normalizer") -> "Dataset":
        return replace(self, normalizer=normalizer)


def assemble(
    gms: Sequence[GroundMotion],
    structures: Sequence[StructureParams | tuple[float, float]],
    settings: SimSettings | None = None,
    split: str = "train",
    seed: int | None = None,
    max_divergent_fraction: float = 0.01,
) -> Dataset:
    """Simulate the Cartesian product of records and structures.

    ``gms`` are the already PGA-scaled records. Structures may be given as
    ``StructureParams`` or ``(stiffness N/m, mass kg)`` pairs, the latter
    completed from ``settings``.
    """
    settings = settings or SimSettings()
    if not gms or not structures:
        raise InvalidConfig("assemble needs at least one record and one structure")
    lengths = {len(g) for g in gms}
    dts = {g.dt for g in gms}
    if len(lengths) != 1 or len(dts) != 1:
        raise InvalidConfig("all records in a split must share length and dt")
    structs = [s if isinstance(s, StructureParams) else settings.structure(*s) for s in structures]
    records = np.stack([g.accel for g in gms])
    dt = gms[0].dt

    n_rec, n_str = len(gms), len(structs)
    rec_idx = np.repeat(np.arange(n_rec), n_str)
    str_idx = np.tile(np.arange(n_str), n_rec)
    n = len(rec_idx)
    targets = np.empty((n, records.shape[1]))
    valid = np.ones(n, dtype=bool)
    for lo in range(0, n, CHUNK):
        hi = min(lo + CHUNK, n)
        x, _, ok = dynamics.simulate_many(
            [structs[j] for j in str_idx[lo:hi]],
            records[rec_idx[lo:hi]],
            dt,
            settings.substeps,
            method=settings.method,
        )
        targets[lo:hi] = x
        valid[lo:hi] = ok

    dropped = int(n - valid.sum())
    if dropped:
        log.warning("%s split: dropped %d of %d diverged samples", split, dropped, n)
        if dropped > max_divergent_fraction * n:
            raise SimulationFailure(
                f"{dropped} of {n} samples diverged in split {split!r} "
                f"(limit {max_divergent_fraction:.0%})"
            )
    return Dataset(
        split=split,
        dt=dt,
        record_ids=[g.id for g in gms],
        pga=np.array([g.pga for g in gms]),
        records=records,
        structures=structs,
        record_index=rec_idx[valid],
        struct_index=str_idx[valid],
        targets=targets[valid],
        settings=settings,
        seed=seed,
        dropped=dropped,
    )


# ---------------------------------------------------------------------------
# normalisation


def _to_unit(v, lo, hi):
    return 2.0 * (v - lo) / (hi - lo) - 1.0


def _from_unit(u, lo, hi):
    return (u + 1.0) * (hi - lo) / 2.0 + lo


@dataclass(frozen=True)
class Normalizer:
    """Min-max maps of each channel onto [-1, 1], fitted on a training split.

    Values outside the fitted range extrapolate linearly; nothing is clipped.
    ``stiffness``/``mass`` ranges are ``None`` when the model ignores the
    structural channel.
    """

    gm: tuple[float, float]
    target: tuple[float, float]
    stiffness: tuple[float, float] | None
    mass: tuple[float, float] | None
    target_mode: str = "minmax"

    def normalize_gm(self, accel):
        return _to_unit(np.asarray(accel, dtype=float), *self.gm)

    def normalize_struct(self, feats):
        feats = np.asarray(feats, dtype=float)
        if self.stiffness is None:
            return np.zeros_like(feats)
        out = np.empty_like(feats)
        out[..., 0] = _to_unit(feats[..., 0], *self.stiffness)
        out[..., 1] = _to_unit(feats[..., 1], *self.mass)
        return out

    def normalize_target(self, x):
        x = np.asarray(x, dtype=float)
        if self.target_mode == "physical":
            return x.copy()
        return _to_unit(x, *self.target)

    def denormalize(self, series):
        """Map network outputs back to displacement in metres."""
        series = np.asarray(series, dtype=float)
        if self.target_mode == "physical":
            return series.copy()
        return _from_unit(series, *self.target)

    def to_dict(self) -> dict:
        return {
            "gm": list(self.gm),
            "target": list(self.target),
            "stiffness": list(self.stiffness) if self.stiffness else None,
            "mass": list(self.mass) if self.mass else None,
            "target_mode": self.target_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(
            gm=tuple(d["gm"]),
            target=tuple(d["target"]),
            stiffness=tuple(d["stiffness"]) if d.get("stiffness") else None,
            mass=tuple(d["mass"]) if d.get("mass") else None,
            target_mode=d.get("target_mode", "minmax"),
        )


def _range(values: np.ndarray, channel: str) -> tuple[float, float]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if not hi > lo:
        raise DegenerateChannel(f"channel {channel!r} is constant ({lo}) on the training split")
    return lo, hi


def fit_normalizer(train: Dataset, target_mode: str = "minmax", with_structure: bool = True) -> Normalizer:
    if len(train) == 0:
        raise InvalidConfig("cannot fit a normalizer on an empty split")
    if target_mode not in ("minmax", "physical"):
        raise InvalidConfig(f"unknown target_mode {target_mode!r}", "normalizer.target_mode")
    used = np.unique(train.record_index)
    feats = train.struct_features()
    return Normalizer(
        gm=_range(train.records[used], "gm"),
        target=_range(train.targets, "target"),
        stiffness=_range(feats[:, 0], "stiffness") if with_structure else None,
        mass=_range(feats[:, 1], "mass") if with_structure else None,
        target_mode=target_mode,
    )


def normalize(sample: Sample, normalizer: Normalizer) -> Sample:
    return replace(
        sample,
        input_gm=normalizer.normalize_gm(sample.input_gm),
        input_struct=normalizer.normalize_struct(sample.input_struct),
        target=normalizer.normalize_target(sample.raw_target),
        normalized=True,
    )


def denormalize(series, normalizer: Normalizer) -> np.ndarray:
    return normalizer.denormalize(series)


@dataclass
class SequenceData:
    """Normalised network inputs and targets: gm (N, T), struct (N, 2), target (N, T)."""

    gm: np.ndarray
    struct: np.ndarray
    target: np.ndarray

    def __len__(self) -> int:
        return len(self.gm)

    def subset(self, idx) -> "SequenceData":
        return SequenceData(self.gm[idx], self.struct[idx], self.target[idx])


def to_arrays(ds: Dataset, normalizer: Normalizer) -> SequenceData:
    return SequenceData(
        gm=normalizer.normalize_gm(ds.accel()),
        struct=normalizer.normalize_struct(ds.struct_features()),
        target=normalizer.normalize_target(ds.targets),
    )


# ---------------------------------------------------------------------------
# persistence


def save(ds: Dataset, path: str | Path) -> None:
    meta = {
        "manifest": ds.manifest,
        "record_ids": ds.record_ids,
        "structures": [s.to_dict() for s in ds.structures],
    }
    arrays = {
        "pga": ds.pga,
        "records": ds.records,
        "record_index": ds.record_index.astype(float),
        "struct_index": ds.struct_index.astype(float),
        "targets": ds.targets,
    }
    write_container(path, "dataset", meta, arrays)


def load(path: str | Path) -> Dataset:
    meta, arrays = read_container(path, kind="dataset")
    man = meta["manifest"]
    return Dataset(
        split=man["split"],
        dt=man["dt"],
        record_ids=list(meta["record_ids"]),
        pga=arrays["pga"],
        records=arrays["records"],
        structures=[StructureParams.from_dict(d) for d in meta["structures"]],
        record_index=arrays["record_index"].astype(np.int64),
        struct_index=arrays["struct_index"].astype(np.int64),
        targets=arrays["targets"],
        settings=SimSettings.from_dict(man["simulator"]),
        seed=man.get("seed"),
        dropped=man.get("n_dropped", 0),
        normalizer=Normalizer.from_dict(man["normalizer"]) if man.get("normalizer") else None,
        extra=man.get("extra", {}),
    )


def split_overlap(a: Dataset, b: Dataset) -> dict:
    """Shared (record id, PGA) pairs and structure tuples between two splits."""
    pairs_a = {(i, round(float(p), 9)) for i, p in zip(a.record_ids, a.pga)}
    pairs_b = {(i, round(float(p), 9)) for i, p in zip(b.record_ids, b.pga)}
    keys_a = {s.key for s in a.structures}
    keys_b = {s.key for s in b.structures}
    return {"records": sorted(pairs_a & pairs_b), "structures": sorted(keys_a & keys_b)}
