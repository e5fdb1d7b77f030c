"""Command-line front end: generate | train | evaluate | predict | gradcheck.

Each command writes into its own directory under ``--out`` (``data``,
``model``, ``eval``) together with the fully resolved config, so rerunning a
command needs no other state.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dataset, excitation, metrics, network, optimizer, plotting
from .errors import InvalidConfig, ParseError, SeismoError

log = logging.getLogger("seismo")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_GRADCHECK = 0, 1, 2, 3
GRADCHECK_LIMIT = 1e-4


def _setup_logging() -> None:
    level = os.environ.get("SEISMO_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=levels.get(level, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _outdir(args, cfg: dict, sub: str) -> Path:
    if args.out:
        cfg["paths"]["out"] = str(args.out)
    root = Path(cfg["paths"]["out"])
    path = root / sub
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    cfg = cfgmod.load(args.config, args.seed)
    out = _outdir(args, cfg, "data")
    cfgmod.dump(cfg, out / "resolved_config.json")

    splits = {s: cfgmod.build_split(cfg, s) for s in cfgmod.SPLITS}
    norm = dataset.fit_normalizer(splits["train"], cfg["normalizer"]["target_mode"])
    manifest = {"seed": cfg["seed"], "splits": {}}
    for name, ds in splits.items():
        ds = ds.with_normalizer(norm)
        dataset.save(ds, out / f"{name}.sds")
        manifest["splits"][name] = {
            "file": f"{name}.sds",
            "n_samples": len(ds),
            "n_records": len(ds.record_ids),
            "n_structures": len(ds.structures),
            "n_dropped": ds.dropped,
            "hash": ds.manifest_hash(),
        }
        log.info("%s: %d samples", name, len(ds))
    manifest["normalizer"] = norm.to_dict()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    # spectra of the unscaled training records for a quick look at the input
    ps = cfg["eval"]["spectrum_periods"]
    periods = np.linspace(ps["start"], ps["stop"], ps["count"])
    zeta = cfg["simulator"]["damping"]["zeta"]
    curves = []
    rows = []
    for gm in cfgmod.base_records(cfg, "train"):
        sa = excitation.response_spectrum(gm, periods, zeta=zeta)[:, 1]
        curves.append((gm.id, sa))
        rows.extend([gm.id, repr(float(p)), repr(float(v))] for p, v in zip(periods, sa))
    _write_rows(out / "spectra.csv", ["record_id", "period_s", "Sa_m_s2"], rows)
    if cfg["eval"]["plots"]:
        plotting.spectra(periods, curves, out / "spectra.png")

    for name, info in manifest["splits"].items():
        print(f"{name}: {info['n_samples']} samples ({info['n_records']} records x {info['n_structures']} structures)")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _normalizer_for(cell: str, train: dataset.Dataset, target_mode: str) -> dataset.Normalizer:
    # baselines without a structural channel get zeroed structure inputs
    return dataset.fit_normalizer(train, target_mode, with_structure=cell == "mcgru")


def cmd_train(args) -> int:
    cfg = cfgmod.load(args.config, args.seed)
    root = Path(args.out or cfg["paths"]["out"])
    data_dir = Path(args.data) if args.data else root / "data"
    out = _outdir(args, cfg, "model")
    cfgmod.dump(cfg, out / "resolved_config.json")

    train_ds = dataset.load(data_dir / "train.sds")
    val_ds = dataset.load(data_dir / "val.sds")
    arch = cfgmod.arch(cfg)
    norm = _normalizer_for(arch.cell, train_ds, cfg["normalizer"]["target_mode"])
    tcfg = cfgmod.train_config(cfg)

    model = network.init_params(arch, cfg["seed"])
    model, history = optimizer.train(model, dataset.to_arrays(train_ds, norm), dataset.to_arrays(val_ds, norm), tcfg)

    meta = {
        "normalizer": norm.to_dict(),
        "train": tcfg.to_dict(),
        "best_epoch": history.best_epoch,
        "epochs_run": len(history.epochs),
        "data": {s: train_ds.manifest_hash() if s == "train" else val_ds.manifest_hash() for s in ("train", "val")},
    }
    network.save_checkpoint(out / "model.ckpt", model, meta)
    history.to_csv(out / "history.csv")
    if cfg["eval"]["plots"] and history.epochs:
        plotting.loss_history(history, out / "loss.png")
    best = history.val_mse[history.best_epoch - 1] if history.best_epoch else float("nan")
    print(f"trained {len(history.epochs)} epochs, best epoch {history.best_epoch}, val_mse {best:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _sample_id(ds: dataset.Dataset, i: int) -> str:
    r = ds.record_index[i]
    s = ds.structures[ds.struct_index[i]]
    return f"{ds.record_ids[r]}@{ds.pga[r] / excitation.G:.2f}g|k={s.stiffness:g}|m={s.mass:g}"


def _file_tag(ds: dataset.Dataset, i: int) -> str:
    r = ds.record_index[i]
    s = ds.structures[ds.struct_index[i]]
    return f"k{s.stiffness / 1e3:g}_m{s.mass:g}_{ds.record_ids[r]}_{ds.pga[r] / excitation.G:.2f}g"


def _load_model(path: Path):
    model, meta = network.load_checkpoint(path)
    return model, meta, dataset.Normalizer.from_dict(meta["normalizer"])


def _predict_physical(model, norm, gm, struct) -> np.ndarray:
    pred = network.predict(model, norm.normalize_gm(gm), norm.normalize_struct(struct))
    return norm.denormalize(pred[..., 0])


def cmd_evaluate(args) -> int:
    cfg = cfgmod.load(args.config, args.seed)
    root = Path(args.out or cfg["paths"]["out"])
    ckpt = Path(args.checkpoint) if args.checkpoint else root / "model" / "model.ckpt"
    ds_path = Path(args.dataset) if args.dataset else root / "data" / "test.sds"
    out = _outdir(args, cfg, "eval")
    cfgmod.dump(cfg, out / "resolved_config.json")

    model, _, norm = _load_model(ckpt)
    ds = dataset.load(ds_path)
    preds = _predict_physical(model, norm, ds.accel(), ds.struct_features())
    keys = ds.structure_keys()
    ids = [_sample_id(ds, i) for i in range(len(ds))]
    report = metrics.evaluate(keys, list(preds), list(ds.targets), ids)

    (out / "metrics.json").write_text(report.to_json() + "\n")
    metrics.write_subsets_csv(report.subsets, out / "subsets.csv")
    ci_vals = [s["ci"] for s in report.per_sample]
    edges, mass = metrics.ci_distribution(ci_vals, bins=cfg["eval"]["ci_bins"], value_range=(-1.0, 1.0))
    metrics.write_histogram_csv(edges, mass, out / "ci_hist.csv")

    # best, median and worst subsets stand in for the representative cases
    rows = report.subsets
    reps = [rows[0], rows[len(rows) // 2], rows[-1]] if len(rows) >= 3 else list(rows)
    mode = cfg["eval"]["prediction_csvs"]
    if mode != "none":
        pred_dir = out / "predictions"
        pred_dir.mkdir(exist_ok=True)
        rep_keys = {(r.stiffness, r.mass) for r in reps}
        t = np.arange(ds.seq_len) * ds.dt
        for i in range(len(ds)):
            if mode == "representative" and keys[i] not in rep_keys:
                continue
            _write_rows(
                pred_dir / f"{_file_tag(ds, i)}.csv",
                ["time_s", "pred_m", "truth_m"],
                ([repr(float(a)), repr(float(b)), repr(float(c))] for a, b, c in zip(t, preds[i], ds.targets[i])),
            )

    if cfg["eval"]["plots"]:
        plotting.subset_mae(rows, out / "subset_mae.png")
        plotting.ci_histogram(edges, mass, out / "ci_hist.png", label=model.arch.cell.upper())
        series = []
        t = np.arange(ds.seq_len) * ds.dt
        for r in reps:
            # the sample with the largest response in the subset shows the most
            idx = [i for i in range(len(ds)) if keys[i] == (r.stiffness, r.mass)]
            i = max(idx, key=lambda j: float(np.max(np.abs(ds.targets[j]))))
            title = f"k={r.stiffness / 1e3:g} kN/m, m={r.mass:g} kg (MAE rank {metrics.ordinal(r.rank, len(rows))})"
            series.append((title, ds.targets[i], preds[i]))
        plotting.time_histories(t, series, out / "representative.png")

    agg = report.aggregate
    print(f"samples {agg['n_samples']}  mse {agg['mse']:.6g}  mae {agg['mae']:.6g}  r2 {agg['r2']:.6f}  mean_ci {agg['mean_ci']:.6f}")
    print(f"subsets {len(rows)}; wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# predict


def _read_truth(path: str, n: int) -> np.ndarray:
    gm = excitation.load_csv(path)  # same two-column time/value layout
    if len(gm) < n:
        raise InvalidConfig(f"truth series has {len(gm)} samples, prediction {n}", "--truth")
    return np.asarray(gm.accel[:n])


def cmd_predict(args) -> int:
    model, meta, norm = _load_model(Path(args.checkpoint))
    gm = excitation.load_csv(args.gm, resample_dt=args.dt)
    struct = np.array([args.stiffness, args.mass], dtype=float)
    pred = _predict_physical(model, norm, gm.accel, struct)
    out = Path(args.out) if args.out else Path("prediction.csv")
    if out.suffix.lower() != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "prediction.csv"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    t = gm.time
    cols = [t, pred]
    header = ["time_s", "pred_m"]
    if args.truth:
        cols.append(_read_truth(args.truth, len(pred)))
        header.append("truth_m")
    _write_rows(out, header, ([repr(float(v)) for v in row] for row in zip(*cols)))
    fn = math.sqrt(args.stiffness / args.mass) / (2 * math.pi)
    print(f"k={args.stiffness:g} N/m m={args.mass:g} kg (fn {fn:.3f} Hz): peak |x| {np.max(np.abs(pred)):.6g} m")
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    base = cfgmod.load(args.config, args.seed)["arch"] if args.config else {}
    arch = network.ModelArch(
        cell=args.cell or base.get("cell", "mcgru"),
        num_layers=args.layers or base.get("num_layers", 2),
        hidden_size=args.hidden or base.get("hidden_size", 16),
    )
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    model = network.init_params(arch, seed)
    T, B = args.steps, args.batch
    sample = (rng.uniform(-1, 1, (B, T)), rng.uniform(-1, 1, (B, 2)), rng.uniform(-1, 1, (B, T)))
    err = network.gradient_check(model, sample, eps=1e-6)
    print(f"{arch.cell} layers={arch.num_layers} hidden={arch.hidden_size} T={T} params={model.n_params()}")
    print(f"max relative error: {err:.3e}")
    if err >= GRADCHECK_LIMIT:
        print(f"FAIL: error >= {GRADCHECK_LIMIT:g}")
        return EXIT_GRADCHECK
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seismo", description="MC-GRU seismic response surrogate")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or name of a bundled config")
    common.add_argument("--out", help="output root directory (default: paths.out of the config)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="simulate train/val/test datasets")

    t = sub.add_parser("train", parents=[common], help="train a model on generated data")
    t.add_argument("--data", help="directory holding train.sds and val.sds (default: OUT/data)")

    e = sub.add_parser("evaluate", parents=[common], help="metrics and report files for a dataset")
    e.add_argument("--checkpoint", help="default: OUT/model/model.ckpt")
    e.add_argument("--dataset", help="default: OUT/data/test.sds")

    pr = sub.add_parser("predict", parents=[common], help="displacement of one structure under one record")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--gm", required=True, help="ground-acceleration CSV (m/s^2)")
    pr.add_argument("--stiffness", type=float, required=True, help="N/m")
    pr.add_argument("--mass", type=float, required=True, help="kg")
    pr.add_argument("--dt", type=float, help="resample the record to this step (s)")
    pr.add_argument("--truth", help="optional displacement CSV (time_s, x_m) to include")

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of BPTT gradients")
    g.add_argument("--cell", choices=network.CELLS)
    g.add_argument("--layers", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--steps", type=int, default=20)
    g.add_argument("--batch", type=int, default=2)
    return p


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    limit = contextlib.nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits

        limit = threadpool_limits(limits=args.threads)
    try:
        with limit:
            return COMMANDS[args.command](args)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SeismoError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
