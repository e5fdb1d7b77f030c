"""Run configuration: defaults, JSON loading, schema validation and the
builders that turn a resolved config into library objects."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

from . import dataset, excitation
from .dynamics import BoucWenParams, DampingSpec
from .errors import InvalidConfig, ParseError
from .network import ModelArch
from .optimizer import TrainConfig

SPLITS = ("train", "val", "test")
# record seeds are seed * SEED_STRIDE + split offset + index
SEED_STRIDE = 10_000
SPLIT_OFFSET = {"train": 0, "val": 1_000, "test": 2_000}

DEFAULTS: dict = {
    "seed": 0,
    "excitation": {
        "source": "synthetic",
        "duration": 30.0,
        "dt": 0.02,
        "pga_levels_g": [0.2, 0.6, 1.0],
        "records": {"train": 10, "val": 3, "test": 5},
        "csv": {"train": [], "val": [], "test": []},
        "kanai_tajimi": {
            "omega_g": 15.0,
            "zeta_g": 0.6,
            "rise_s": 2.0,
            "plateau_s": 16.0,
            "decay_s": 12.0,
            "noise_intensity": 0.01,
        },
    },
    "structures": {
        "train": {"grid": {"stiffness_kN_m": [30, 45, 65], "mass_kg": [120, 180, 240]}},
        "val": {"grid": {"stiffness_kN_m": [30, 45, 65], "mass_kg": [120, 180, 240]}},
        "test": {"grid": {"stiffness_kN_m": [37.5, 55], "mass_kg": [150, 210]}},
    },
    "simulator": {
        "model": "linear",
        "method": "newmark",
        "substeps": 10,
        "damping": {"kind": "ratio", "zeta": 0.05, "alpha": 0.0, "beta": 0.0},
        "bouc_wen": {"alpha": 1.0, "beta": 2.0, "n": 3.0},
    },
    "normalizer": {"target_mode": "minmax"},
    "arch": {"cell": "mcgru", "num_layers": 2, "hidden_size": 32, "input_size1": 1, "input_size2": 2, "output_size": 1},
    "train": {
        "batch_size": 32,
        "max_epochs": 300,
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "patience": 20,
        "grad_clip": 5.0,
    },
    "eval": {
        "ci_bins": 20,
        "plots": True,
        "prediction_csvs": "representative",
        "spectrum_periods": {"start": 0.05, "stop": 3.0, "count": 60},
    },
    "paths": {"out": "runs/default"},
}


def schema() -> dict:
    text = resources.files("seismo").joinpath("configs/schema.json").read_text()
    return json.loads(text)


def bundled(name: str) -> Path | None:
    for candidate in (name, name + ".json"):
        ref = resources.files("seismo").joinpath("configs", candidate)
        if ref.is_file():
            return Path(str(ref))
    return None


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "structures":
            out[key] = _merge(out[key], val)
        elif key == "structures" and isinstance(val, dict):
            # a split given explicitly replaces the default wholesale
            out[key] = {**out[key], **copy.deepcopy(val)}
        else:
            out[key] = copy.deepcopy(val)
    return out


def _key_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        parts += extra[:1]
    return ".".join(parts) or "<root>"


def validate(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise InvalidConfig(err.message, _key_path(err))
    ex = cfg["excitation"]
    if ex["source"] == "csv":
        for split in SPLITS:
            if not ex["csv"].get(split):
                raise InvalidConfig("csv source needs at least one file per split", f"excitation.csv.{split}")
    ps = cfg["eval"]["spectrum_periods"]
    if not ps["stop"] > ps["start"]:
        raise InvalidConfig("stop must exceed start", "eval.spectrum_periods.stop")
    # constructing the typed objects catches the remaining cross-field rules
    arch(cfg)
    train_config(cfg)
    sim_settings(cfg)


def resolve(user: dict | None = None, seed: int | None = None) -> dict:
    """Merge ``user`` over the defaults, apply a seed override and validate."""
    cfg = _merge(DEFAULTS, user or {})
    if seed is not None:
        cfg["seed"] = seed
    validate(cfg)
    return cfg


def load(path: str | Path | None, seed: int | None = None) -> dict:
    """Read a JSON config (a path, or the name of a bundled config) and resolve it."""
    if path is None:
        return resolve({}, seed)
    p = Path(path)
    if not p.is_file():
        p = bundled(str(path)) or p
    try:
        text = p.read_text()
    except OSError as exc:
        raise InvalidConfig(f"cannot read config: {exc}", str(path)) from exc
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: {exc.msg}", exc.lineno) from exc
    if not isinstance(user, dict):
        raise InvalidConfig("config must be a JSON object", "<root>")
    cfg = resolve(user, seed)
    # relative csv paths are taken relative to the config file
    base = p.resolve().parent
    for split in SPLITS:
        cfg["excitation"]["csv"][split] = [str((base / f) if not Path(f).is_absolute() else Path(f))
                                           for f in cfg["excitation"]["csv"][split]]
    return cfg


def dump(cfg: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# builders


def sim_settings(cfg: dict) -> dataset.SimSettings:
    s = cfg["simulator"]
    d = s["damping"]
    damping = DampingSpec(kind=d["kind"], zeta=d["zeta"], alpha=d["alpha"], beta=d["beta"])
    return dataset.SimSettings(
        model=s["model"],
        damping=damping,
        substeps=s["substeps"],
        method=s["method"] if s["model"] == "linear" else "newmark",
        bouc_wen=BoucWenParams(**s["bouc_wen"]),
    )


def arch(cfg: dict) -> ModelArch:
    return ModelArch(**cfg["arch"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**cfg["train"], seed=cfg["seed"])


def kanai_tajimi(cfg: dict) -> excitation.KanaiTajimiParams:
    return excitation.KanaiTajimiParams(**cfg["excitation"]["kanai_tajimi"])


def structures(cfg: dict, split: str) -> list[tuple[float, float]]:
    """(stiffness N/m, mass kg) pairs of a split."""
    entry = cfg["structures"][split]
    if entry == "table1":
        return dataset.table_structures(dataset.TABLE1)
    if entry == "table2":
        return dataset.table_structures(dataset.TABLE2)
    if "grid" in entry:
        return dataset.grid(entry["grid"]["stiffness_kN_m"], entry["grid"]["mass_kg"])
    return [(k * 1e3, m) for k, m in entry["table"]]


def record_seeds(cfg: dict, split: str) -> list[int]:
    n = cfg["excitation"]["records"][split]
    base = cfg["seed"] * SEED_STRIDE + SPLIT_OFFSET[split]
    return [base + i for i in range(n)]


def base_records(cfg: dict, split: str) -> list[excitation.GroundMotion]:
    """Unscaled records of a split, synthetic or read from CSV."""
    ex = cfg["excitation"]
    if ex["source"] == "csv":
        gms = [excitation.load_csv(f, resample_dt=ex["dt"]) for f in ex["csv"][split]]
        n = min(len(g) for g in gms)
        # records in one split must share a length; trim to the shortest
        return [excitation.GroundMotion(g.id, g.dt, g.accel[:n]) for g in gms]
    kt = kanai_tajimi(cfg)
    return [
        excitation.generate_synthetic(kt, duration=ex["duration"], dt=ex["dt"], seed=s)
        for s in record_seeds(cfg, split)
    ]


def scaled_records(cfg: dict, split: str) -> list[excitation.GroundMotion]:
    out = []
    for gm in base_records(cfg, split):
        out.extend(excitation.scale_to_levels(gm, cfg["excitation"]["pga_levels_g"]))
    return out


def build_split(cfg: dict, split: str) -> dataset.Dataset:
    return dataset.assemble(
        scaled_records(cfg, split),
        structures(cfg, split),
        sim_settings(cfg),
        split=split,
        seed=cfg["seed"],
    )
