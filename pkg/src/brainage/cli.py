"""Batch command-line front door.

Subcommands: train, predict, evaluate, heritability, reliability,
phantom, gradcheck. Configuration is a JSON document whose sections and
defaults are listed in DEFAULT_CONFIG; command-line --seed overrides
every configured seed. Report-emitting commands render matplotlib
figures next to their delimited output unless --no-figures is given.

Exit codes: 0 success, 2 input validation, 3 numeric failure, 4 I/O.
Errors are a single machine-parsable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import replace as dataclass_replace
from pathlib import Path

import numpy as np

from . import figures
from .checkpoint import load_checkpoint, save_checkpoint
from .engine import (
    BatchNorm3d,
    Conv3d,
    Linear,
    MaxPool3d,
    Sequential,
    gradcheck,
)
from .errors import (
    BrainAgeError,
    FormatError,
    InputOutputError,
    NumericError,
    ValidationError,
)
from .gpr import gpr_fit, gpr_predict, load_gpr, save_gpr
from .manifest import (
    read_manifest,
    read_predictions,
    split_cohort,
    write_manifest,
    write_predictions,
)
from .model import (
    ArchitectureSpec,
    TrainConfig,
    build_fused_from_spec,
    build_single_branch,
    predict,
    train,
)
from .nifti import read_nifti, write_nifti
from .phantom import (
    PhantomParams,
    ScannerEffect,
    TwinSimParams,
    generate_cohort,
    generate_rescan_cohort,
    generate_twin_cohort,
)
from .stats import (
    PredictionRecord,
    TwinPair,
    age_correct,
    brain_pad,
    compute_metrics,
    fit_variance_model,
    reliability_report,
    select_model_aic,
)

DEFAULT_CONFIG = {
    "model": "cnn",
    "architecture": {
        "num_blocks": 5,
        "base_feature_maps": 8,
        "zscore_inputs": False,
    },
    "train": {
        "learning_rate": 0.01,
        "lr_decay_per_epoch": 0.03,
        "momentum": 0.9,
        "weight_decay": 0.00005,
        "epochs": 100,
        "batch_size": 8,
        "augment": False,
        "max_shift_voxels": 10,
        "max_rotation_degrees": 40.0,
        "restarts": 3,
        "seed": 0,
    },
    "split": {
        "fractions": [0.8, 0.1, 0.1],
        "counts": None,
        "seed": 0,
    },
    "gpr": {
        "signal_scale": None,
        "noise_variance": None,
    },
    "heritability": {
        "bootstrap": 1000,
    },
    "phantom": {
        "kind": "cohort",
        "n": 600,
        "age_range": [18.0, 90.0],
        "seed": 0,
        "params": {},
        "twins": {
            "n_mz": 100,
            "n_dz": 100,
            "a2": 0.6,
            "c2": 0.2,
            "e2": 0.2,
            "age_range": [18.0, 90.0],
            "offset_sd": 3.0,
            "seed": None,
        },
        "scanner_effect": None,
    },
}


def load_config(path=None) -> dict:
    """DEFAULT_CONFIG deep-merged with the user's JSON document."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is None:
        return config
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as exc:
        raise InputOutputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ValidationError(f"config {path} must be a JSON object")

    def merge(base: dict, override: dict, crumb: str):
        for key, value in override.items():
            if key not in base:
                raise ValidationError(f"unknown config key {crumb}{key}")
            if isinstance(base[key], dict) and isinstance(value, dict):
                merge(base[key], value, f"{crumb}{key}.")
            else:
                base[key] = value

    # opaque leaves replaced wholesale and passed to dataclass constructors
    for head, leaf in (("phantom", "params"), ("phantom", "scanner_effect")):
        if head in user and isinstance(user[head], dict) and leaf in user[head]:
            config[head][leaf] = user[head].pop(leaf)
    merge(config, user, "")
    if config["model"] not in ("cnn", "gpr"):
        raise ValidationError(
            f"config model must be 'cnn' or 'gpr', got {config['model']!r}"
        )
    return config


def _resolve(path_str: str, base: Path) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else base / p


def _pair_mode(rows, input_kind) -> bool:
    if input_kind is not None:
        return input_kind == "gm+wm"
    return all(";" in r.volume_path for r in rows)


def _load_volumes(rows, pair_mode: bool, base: Path):
    volumes = []
    for row in rows:
        parts = [p.strip() for p in row.volume_path.split(";")]
        if pair_mode:
            if len(parts) != 2 or not all(parts):
                raise ValidationError(
                    f"subject {row.subject_id}: gm+wm needs two "
                    f"semicolon-separated paths, got {row.volume_path!r}"
                )
            volumes.append(tuple(read_nifti(_resolve(p, base)) for p in parts))
        else:
            if len(parts) != 1:
                raise ValidationError(
                    f"subject {row.subject_id}: expected a single volume "
                    f"path, got {row.volume_path!r} (use --input-kind gm+wm "
                    "for paired inputs)"
                )
            volumes.append(read_nifti(_resolve(parts[0], base)))
    return volumes


def _features(volumes) -> np.ndarray:
    """Flattened float64 feature rows for the GPR (pairs concatenated)."""
    if isinstance(volumes[0], tuple):
        return np.stack([
            np.concatenate([a.data.reshape(-1), b.data.reshape(-1)])
            for a, b in volumes
        ]).astype(np.float64)
    return np.stack([v.data.reshape(-1) for v in volumes]).astype(np.float64)


def _ages(rows) -> np.ndarray:
    return np.array([r.age_years for r in rows], dtype=np.float64)


def _write_table(path, header, rows):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_cell(v) for v in row) + "\n")
    except OSError as exc:
        raise InputOutputError(f"cannot write {path}: {exc}") from exc


def _cell(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputOutputError(f"cannot create {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = load_config(args.config)
    rows = read_manifest(args.manifest)
    base = Path(args.manifest).resolve().parent
    out = _out_dir(args)

    split_cfg = config["split"]
    split_seed = args.seed if args.seed is not None else split_cfg["seed"]
    train_ids, val_ids, test_ids = split_cohort(
        rows, counts=split_cfg["counts"],
        fractions=None if split_cfg["counts"] else split_cfg["fractions"],
        seed=split_seed,
    )
    membership = {}
    for name, ids in (("train", train_ids), ("val", val_ids),
                      ("test", test_ids)):
        membership.update({sid: name for sid in ids})
    _write_table(out / "split.csv", ("subject_id", "split"),
                 sorted({(r.subject_id, membership[r.subject_id])
                         for r in rows}))

    train_rows = [r for r in rows if membership[r.subject_id] == "train"]
    val_rows = [r for r in rows if membership[r.subject_id] == "val"]
    if not train_rows or not val_rows:
        raise ValidationError(
            "split leaves an empty train or validation set "
            f"({len(train_rows)} train rows, {len(val_rows)} val rows)"
        )

    pair_mode = _pair_mode(rows, args.input_kind)
    train_vols = _load_volumes(train_rows, pair_mode, base)
    val_vols = _load_volumes(val_rows, pair_mode, base)
    train_ages = _ages(train_rows)
    val_ages = _ages(val_rows)

    if config["model"] == "gpr":
        x_train = _features(train_vols)
        model = gpr_fit(x_train, train_ages,
                        signal_scale=config["gpr"]["signal_scale"],
                        noise_variance=config["gpr"]["noise_variance"])
        model_path = out / "model.npz"
        save_gpr(model, x_train, model_path)
        train_mae = float(np.mean(np.abs(
            gpr_predict(model, x_train, x_train) - train_ages)))
        val_mae = float(np.mean(np.abs(
            gpr_predict(model, x_train, _features(val_vols)) - val_ages)))
        history_rows = [(0, 0.0, train_mae, val_mae)]
        summary = (
            f"train: model=gpr signal_scale={model.signal_scale:g} "
            f"noise_variance={model.noise_variance:g} train_mae={train_mae:.3f} "
            f"val_mae={val_mae:.3f} model_file={model_path}"
        )
        history = None
    else:
        tr_cfg = dict(config["train"])
        if args.seed is not None:
            tr_cfg["seed"] = args.seed
        try:
            train_config = TrainConfig(**tr_cfg)
        except TypeError as exc:
            raise ValidationError(f"bad train config: {exc}") from None

        first = train_vols[0][0] if pair_mode else train_vols[0]
        try:
            arch = ArchitectureSpec(
                input_dims=first.dims,
                input_channels=1,
                base_feature_maps=config["architecture"]["base_feature_maps"],
                num_blocks=config["architecture"]["num_blocks"],
                branches=2 if pair_mode else 1,
                zscore_inputs=config["architecture"]["zscore_inputs"],
            )
        except TypeError as exc:
            raise ValidationError(f"bad architecture config: {exc}") from None
        rng = np.random.default_rng(train_config.seed)
        if pair_mode:
            model = build_fused_from_spec(arch, rng)
        else:
            model = build_single_branch(arch, rng)

        result = train(model, (train_vols, train_ages),
                       (val_vols, val_ages), train_config)
        model_path = out / "model.bage"
        save_checkpoint(model, model_path, epoch=result.best_epoch,
                        best_val_mae=result.best_val_mae, seed=result.seed)
        history = result.history
        history_rows = [
            (rec.epoch, rec.learning_rate, rec.train_mae, rec.val_mae)
            for rec in history
        ]
        summary = (
            f"train: model=cnn best_val_mae={result.best_val_mae:.3f} "
            f"best_epoch={result.best_epoch} best_restart={result.best_restart} "
            f"model_file={model_path}"
        )

    _write_table(out / "history.csv",
                 ("epoch", "learning_rate", "train_mae", "val_mae"),
                 history_rows)
    if history and not args.no_figures:
        figures.plot_training_curves(history, out / "training_curves.png")
    print(summary)
    return 0


def _load_model_file(path: Path):
    """Detect the model kind by file magic and load it."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise InputOutputError(f"cannot read model {path}: {exc}") from exc
    if head == b"BAGE":
        model, meta = load_checkpoint(path)
        return ("cnn", model, meta)
    if head[:2] == b"PK":
        model, x_train = load_gpr(path)
        return ("gpr", model, x_train)
    raise FormatError(
        f"model {path} is neither a checkpoint (BAGE) nor a saved GPR (.npz)"
    )


def cmd_predict(args) -> int:
    rows = read_manifest(args.manifest)
    base = Path(args.manifest).resolve().parent
    out = _out_dir(args)
    kind, model, extra = _load_model_file(Path(args.model))

    if kind == "cnn":
        pair_mode = model.spec.branches == 2
        if args.input_kind is not None and _pair_mode(rows, args.input_kind) != pair_mode:
            raise ValidationError(
                f"--input-kind {args.input_kind} does not match the "
                f"checkpoint ({model.spec.branches} branch(es))"
            )
        volumes = _load_volumes(rows, pair_mode, base)
        preds = predict(model, volumes)
    else:
        pair_mode = _pair_mode(rows, args.input_kind)
        volumes = _load_volumes(rows, pair_mode, base)
        preds = gpr_predict(model, extra, _features(volumes))

    records = brain_pad([
        PredictionRecord(
            subject_id=row.subject_id,
            chronological_age=row.age_years,
            predicted_age=float(pred),
            site=row.site,
            session=row.session,
        )
        for row, pred in zip(rows, preds)
    ])
    pred_path = out / "predictions.csv"
    write_predictions(records, pred_path)
    print(f"predict: model={kind} n={len(records)} predictions={pred_path}")
    return 0


def cmd_evaluate(args) -> int:
    records = read_predictions(args.predictions)
    out = _out_dir(args)
    preds = np.array([r.predicted_age for r in records])
    ages = np.array([r.chronological_age for r in records])
    pads = preds - ages
    report = compute_metrics(preds, ages)
    baseline_mae = float(np.mean(np.abs(ages - ages.mean())))
    metric_rows = [
        ("n", len(records)),
        ("mae", report.mae),
        ("rmse", report.rmse),
        ("pearson_r", report.pearson_r if report.r_defined else None),
        ("r_squared", report.r_squared if report.r_defined else None),
        ("mean_baseline_mae", baseline_mae),
        ("brain_pad_mean", float(pads.mean())),
        ("brain_pad_sd", float(pads.std(ddof=1)) if len(records) > 1 else None),
    ]
    _write_table(out / "metrics.csv", ("metric", "value"), metric_rows)
    if not args.no_figures:
        figures.plot_predictions(records, out / "predicted_vs_age.png")
    r_text = f"{report.pearson_r:.4f}" if report.r_defined else "NA"
    print(
        f"evaluate: n={len(records)} mae={report.mae:.3f} "
        f"rmse={report.rmse:.3f} r={r_text} baseline_mae={baseline_mae:.3f}"
    )
    return 0


def _twin_phenotypes(rows, records):
    """Per-pair brain-PAD phenotypes joined from manifest and predictions."""
    by_key = {(r.subject_id, r.session): r for r in records}
    groups: dict[str, list] = {}
    for row in rows:
        if row.pair_id == "NA":
            continue
        rec = by_key.get((row.subject_id, row.session))
        if rec is None:
            raise ValidationError(
                f"no prediction for twin subject {row.subject_id} "
                f"session {row.session}"
            )
        if abs(rec.chronological_age - row.age_years) > 1e-6:
            raise ValidationError(
                f"subject {row.subject_id}: manifest age {row.age_years} "
                f"disagrees with predictions age {rec.chronological_age}"
            )
        groups.setdefault(row.pair_id, []).append(
            (row.zygosity, row.age_years,
             rec.predicted_age - rec.chronological_age)
        )
    if not groups:
        raise ValidationError("manifest contains no twin pairs (pair_id all NA)")
    pair_ids = sorted(groups)
    zygosities, ages, pads = [], [], []
    for pid in pair_ids:
        members = groups[pid]
        if len(members) != 2:
            raise ValidationError(
                f"pair {pid}: expected 2 predicted members, got {len(members)}"
            )
        zygosities.append(members[0][0])
        ages.extend([members[0][1], members[1][1]])
        pads.extend([members[0][2], members[1][2]])
    return zygosities, np.array(ages), np.array(pads)


def _pairs_from_arrays(zygosities, pads) -> list[TwinPair]:
    return [
        TwinPair(float(pads[2 * i]), float(pads[2 * i + 1]), zyg)
        for i, zyg in enumerate(zygosities)
    ]


def cmd_heritability(args) -> int:
    config = load_config(args.config)
    rows = read_manifest(args.manifest)
    records = read_predictions(args.predictions)
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    n_boot = int(config["heritability"]["bootstrap"])

    zygosities, ages, pads = _twin_phenotypes(rows, records)
    panels = [("unadjusted", pads), ("age_corrected", age_correct(pads, ages))]

    table = []
    fits_for_figure = {}
    lines = []
    for panel, values in panels:
        pairs = _pairs_from_arrays(zygosities, values)
        selected = select_model_aic(pairs, h2_se_bootstrap=n_boot, seed=seed)
        forced = fit_variance_model(pairs, "AE", h2_se_bootstrap=n_boot,
                                    seed=seed)
        for fit_name, fit in (("selected", selected), ("forced_ae", forced)):
            table.append((
                panel, fit_name, fit.model, fit.a2, fit.c2, fit.e2,
                fit.h2, fit.h2_se, fit.log_likelihood, fit.aic, fit.boundary,
            ))
            fits_for_figure[f"{panel}\n{fit_name} ({fit.model})"] = fit
        h2_text = "NA" if selected.h2 is None else f"{selected.h2:.3f}"
        se_text = f" forced_ae_h2_se={forced.h2_se:.3f}" \
            if forced.h2_se is not None else ""
        lines.append(
            f"heritability[{panel}]: selected={selected.model} "
            f"a2={selected.a2:.3f} c2={selected.c2:.3f} e2={selected.e2:.3f} "
            f"h2={h2_text} forced_ae_h2={forced.h2:.3f}{se_text}"
        )

    _write_table(
        out / "heritability.csv",
        ("panel", "fit", "model", "a2", "c2", "e2", "h2", "h2_se",
         "log_likelihood", "aic", "boundary"),
        table,
    )
    if not args.no_figures:
        figures.plot_variance_components(
            fits_for_figure, out / "variance_components.png"
        )
    for line in lines:
        print(line)
    return 0


def cmd_reliability(args) -> int:
    records = read_predictions(args.predictions)
    out = _out_dir(args)
    session_a, session_b = args.session_a, args.session_b
    rec_a = [r for r in records if r.session == session_a]
    rec_b = [r for r in records if r.session == session_b]
    if not rec_a or not rec_b:
        present = sorted({r.session for r in records})
        raise ValidationError(
            f"sessions {session_a} and {session_b} not both present "
            f"(found sessions {present})"
        )
    result = reliability_report(rec_a, rec_b)
    _write_table(
        out / "reliability.csv",
        ("metric", "value"),
        [
            ("icc_2_1", result.icc),
            ("ci_low", result.ci_low),
            ("ci_high", result.ci_high),
            ("n_targets", result.n_targets),
            ("n_raters", result.n_raters),
            ("defined", result.defined),
        ],
    )
    if not args.no_figures:
        pads_a = {r.subject_id: r.brain_pad for r in brain_pad(rec_a)}
        pads_b = {r.subject_id: r.brain_pad for r in brain_pad(rec_b)}
        matrix = np.array([[pads_a[s], pads_b[s]] for s in sorted(pads_a)])
        figures.plot_session_agreement(
            matrix, out / "session_agreement.png",
            icc=result.icc if result.defined else None,
        )
    print(
        f"reliability: icc={result.icc:.4f} "
        f"ci=[{result.ci_low:.4f}, {result.ci_high:.4f}] "
        f"n={result.n_targets} sessions=({session_a}, {session_b})"
    )
    return 0


def cmd_phantom(args) -> int:
    config = load_config(args.config)["phantom"]
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else config["seed"]

    params_cfg = dict(config["params"])
    if args.seed is not None or params_cfg.get("seed") is None:
        params_cfg["seed"] = seed
    try:
        params = PhantomParams(**params_cfg)
    except TypeError as exc:
        raise ValidationError(f"bad phantom params: {exc}") from None
    rng = np.random.default_rng(seed)

    kind = config["kind"]
    if kind == "cohort":
        volumes, rows = generate_cohort(
            int(config["n"]), tuple(config["age_range"]), params, rng
        )
    elif kind == "twins":
        twins_cfg = dict(config["twins"])
        if args.seed is not None or twins_cfg.get("seed") is None:
            twins_cfg["seed"] = seed
        try:
            twin_params = TwinSimParams(**twins_cfg)
        except TypeError as exc:
            raise ValidationError(f"bad twin params: {exc}") from None
        volumes, rows = generate_twin_cohort(twin_params, params, rng)
    elif kind == "rescan":
        effect = None
        if config["scanner_effect"] is not None:
            try:
                effect = ScannerEffect(**config["scanner_effect"])
            except TypeError as exc:
                raise ValidationError(f"bad scanner effect: {exc}") from None
        volumes, rows = generate_rescan_cohort(
            int(config["n"]), tuple(config["age_range"]), params, rng,
            effect=effect,
        )
    else:
        raise ValidationError(
            f"phantom kind must be cohort, twins or rescan, got {kind!r}"
        )

    vol_dir = out / "volumes"
    try:
        vol_dir.mkdir(exist_ok=True)
    except OSError as exc:
        raise InputOutputError(f"cannot create {vol_dir}: {exc}") from exc
    placed = []
    for volume, row in zip(volumes, rows):
        rel = f"volumes/{row.subject_id}_s{row.session}.nii"
        write_nifti(volume, out / rel)
        placed.append(dataclass_replace(row, volume_path=rel))
    manifest_path = out / "manifest.csv"
    write_manifest(placed, manifest_path)
    print(
        f"phantom: kind={kind} volumes={len(placed)} manifest={manifest_path}"
    )
    return 0


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)

    def data(*shape):
        return rng.standard_normal(shape)

    checks = []

    lin = Sequential([Linear(16, 3, rng, dtype=np.float64)])
    checks.append(("linear", 1e-7, lin, data(4, 16), data(4, 3)))

    bn = Sequential([BatchNorm3d(3, dtype=np.float64)])
    checks.append(("batchnorm3d", 1e-7, bn, data(2, 3, 3, 3, 3),
                   data(2, 3, 3, 3, 3)))

    conv = Sequential([Conv3d(2, 3, rng, dtype=np.float64)])
    checks.append(("conv3d", 1e-4, conv, data(2, 2, 4, 4, 4),
                   data(2, 3, 4, 4, 4)))

    pool = Sequential([MaxPool3d()])
    checks.append(("maxpool3d", 1e-4, pool, data(2, 2, 4, 4, 4),
                   data(2, 2, 2, 2, 2)))

    checks.append(("mae_loss", 1e-7, Sequential([]), data(5, 3), data(5, 3)))

    composite = build_single_branch(
        ArchitectureSpec(input_dims=(8, 8, 8), base_feature_maps=2,
                         num_blocks=2),
        rng, dtype=np.float64,
    )
    checks.append(("two_block_composite", 1e-4, composite.net,
                   data(2, 1, 8, 8, 8), data(2, 1)))

    failed = []
    for name, tol, fragment, x, target in checks:
        report = gradcheck(fragment, x, target, tolerance=tol)
        status = "PASS" if report.passed else "FAIL"
        print(f"gradcheck {name}: {status} "
              f"(max rel err {report.max_relative_error:.3e}, tol {tol:g})")
        if not report.passed:
            failed.append(name)
    if failed:
        raise NumericError("gradient checks failed: " + ", ".join(failed))
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brainage",
        description="Brain-age prediction from volumetric images: training, "
                    "prediction, and biomarker evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False, config=False, out=True, predictions=False):
        if manifest:
            p.add_argument("--manifest", required=True,
                           help="cohort manifest CSV")
        if predictions:
            p.add_argument("--predictions", required=True,
                           help="predictions CSV (cmd_predict output)")
        if config:
            p.add_argument("--config", default=None, help="JSON config file")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override every configured seed")
        p.add_argument("--input-kind", dest="input_kind", default=None,
                       choices=["gm", "wm", "gm+wm", "raw"],
                       help="input channel layout (gm+wm pairs two "
                            "semicolon-separated paths per row)")
        p.add_argument("--deterministic", action="store_true",
                       help="pin numeric libraries to one thread")
        p.add_argument("--no-figures", dest="no_figures", action="store_true",
                       help="skip figure rendering")

    p = sub.add_parser("train", help="fit a CNN or GPR on a cohort")
    common(p, manifest=True, config=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict ages with a trained model")
    common(p, manifest=True)
    p.add_argument("--model", required=True, help="model file (.bage or .npz)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="accuracy metrics for predictions")
    common(p, predictions=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("heritability",
                       help="twin ACE/AE/E fits on brain-PAD")
    common(p, manifest=True, config=True, predictions=True)
    p.set_defaults(func=cmd_heritability)

    p = sub.add_parser("reliability",
                       help="between-session ICC(2,1) of brain-PAD")
    common(p, predictions=True)
    p.add_argument("--session-a", type=int, default=1)
    p.add_argument("--session-b", type=int, default=2)
    p.set_defaults(func=cmd_reliability)

    p = sub.add_parser("phantom", help="generate a synthetic cohort")
    common(p, config=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every layer")
    common(p, out=False)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.deterministic:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=1):
                return args.func(args)
        return args.func(args)
    except BrainAgeError as exc:
        _print_error(exc, exc.exit_code)
        return exc.exit_code
    except OSError as exc:
        _print_error(exc, 4)
        return 4
    except Exception as exc:  # contract: one parsable line on any failure
        _print_error(exc, 1)
        return 1


def _print_error(exc: Exception, code: int) -> None:
    print(
        json.dumps({
            "error": type(exc).__name__,
            "exit_code": code,
            "message": str(exc),
        }),
        file=sys.stderr,
    )


if __name__ == "__main__":
    sys.exit(main())
