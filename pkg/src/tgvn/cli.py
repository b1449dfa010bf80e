"""Command-line driver for phantom experiments.

Exit status: 0 success, 1 runtime failure, 2 invalid config or input,
3 resource cap exceeded. Failures also print a one-line JSON error record
on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .data import load_tensor, make_phantom_pair, save_png, save_tensor
from .experiment import (
    METRIC_DIRECTIONS,
    ConfigError,
    build_operator,
    compare_arms,
    config_hash,
    default_output_root,
    load_config,
    metric_config,
    offset_seeds,
    run_experiment,
)
from .metrics import ms_ssim_l1, nrmse, psnr, rss, ssim
from .operators import MaterializeError, materialize
from .spectrum import svd_spectrum, spectrum_summary, write_spectrum_csv

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_CAP = 0, 1, 2, 3


class CLIError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _log(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _load(args) -> dict:
    if not args.config:
        raise CLIError(EXIT_CONFIG, "config", "--config is required")
    try:
        config = load_config(args.config)
    except ConfigError as err:
        raise CLIError(EXIT_CONFIG, "config", str(err)) from None
    if args.seed is not None:
        config = offset_seeds(config, args.seed)
    return config


def _out_dir(args, config: dict | None, default_name: str) -> Path:
    if args.out:
        path = Path(args.out)
    elif config is not None and config.get("output"):
        path = Path(config["output"])
    else:
        name = config["name"] if config is not None else default_name
        path = default_output_root() / name
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    config = _load(args)
    out = _out_dir(args, config, "run")
    _log(args, f"running {len(config['arms'])} arm(s) on {len(config['phantom']['seeds'])} slice(s) -> {out}")
    report = run_experiment(config, out, threads=args.threads)
    if report["errors"]:
        raise CLIError(EXIT_RUNTIME, "runtime", "; ".join(f"{e['arm']}: {e['message']}" for e in report["errors"]))
    for arm_id, arm in report["arms"].items():
        s = arm["summary"]
        _log(
            args,
            f"{arm_id:>12}  SSIM {s['ssim_pct']['mean']:.2f}%  PSNR {s['psnr']['mean']:.2f} dB  "
            f"NRMSE {s['nrmse']['mean']:.4f}",
        )
    return EXIT_OK


def _read_report(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise CLIError(EXIT_CONFIG, "input", f"cannot read report {path}: {err}") from None


def _pick_arm(report: dict, arm_id: str | None, path: str) -> tuple[str, dict]:
    arms = report.get("arms", {})
    if arm_id is None:
        if len(arms) != 1:
            raise CLIError(EXIT_CONFIG, "input", f"{path} has {len(arms)} arms; name one with --arm-a/--arm-b")
        arm_id = next(iter(arms))
    if arm_id not in arms:
        raise CLIError(EXIT_CONFIG, "input", f"arm {arm_id!r} not in {path}")
    return arm_id, arms[arm_id]


def cmd_compare(args) -> int:
    report_a = _read_report(args.reports[0])
    report_b = _read_report(args.reports[1]) if len(args.reports) > 1 else report_a
    path_b = args.reports[-1]
    id_a, arm_a = _pick_arm(report_a, args.arm_a, args.reports[0])
    id_b, arm_b = _pick_arm(report_b, args.arm_b, path_b)
    if report_a["slices"] != report_b["slices"]:
        raise CLIError(EXIT_CONFIG, "input", "reports cover different slice sets")
    rows = compare_arms(arm_a["per_slice"], arm_b["per_slice"])
    out = _out_dir(args, None, "compare")
    table = []
    for row in rows:
        m = row["metric"]
        diffs = np.asarray(arm_a["per_slice"][m]) - np.asarray(arm_b["per_slice"][m])
        table.append({"a": id_a, "b": id_b, **row, "mean_difference": float(np.mean(diffs))})
    _write_json(out / "comparison.json", {"a": id_a, "b": id_b, "slices": report_a["slices"], "rows": table})
    with open(out / "comparison.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        cols = ["a", "b", "metric", "direction", "n", "n_effective", "statistic", "p_value", "mean_difference", "error"]
        writer.writerow(cols)
        for row in table:
            writer.writerow([row.get(c, "") if row.get(c) is not None else "" for c in cols])
    with open(out / "scatter.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["slice", "metric", id_a, id_b])
        for m in METRIC_DIRECTIONS:
            for seed, va, vb in zip(report_a["slices"], arm_a["per_slice"][m], arm_b["per_slice"][m]):
                writer.writerow([seed, m, repr(float(va)), repr(float(vb))])
    for row in table:
        if row.get("error"):
            _log(args, f"{row['metric']:>8}: {row['error']}")
        else:
            _log(args, f"{row['metric']:>8}: {row['direction']:<7} p = {row['p_value']:.4g}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    config = _load(args)
    op = build_operator(config)
    spec_cfg = config.get("spectrum", {})
    try:
        dense = materialize(op, spec_cfg.get("max_entries", 10**7))
    except MaterializeError as err:
        raise CLIError(EXIT_CAP, "resource", str(err)) from None
    spec = svd_spectrum(dense, vectors=False)
    out = _out_dir(args, config, "spectrum")
    write_spectrum_csv(spec, out / "spectrum.csv")
    summary = spectrum_summary(spec, q=spec_cfg.get("quantile", 0.25))
    summary["config_sha256"] = config_hash(config)
    _write_json(out / "spectrum.json", summary)
    _log(args, f"condition number {summary['condition_number']}, null_dim {summary['null_dim']}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    config = _load(args)
    op = build_operator(config)
    out = _out_dir(args, config, "phantom")
    shape = tuple(config["phantom"]["shape"])
    for seed in config["phantom"]["seeds"]:
        pair = make_phantom_pair(seed, shape, n_ellipses=config["phantom"].get("n_ellipses", 8))
        for name, img in (("target", pair.target), ("side", pair.side)):
            save_tensor(out / f"{name}_{seed:05d}.tgt", img)
            save_png(out / f"{name}_{seed:05d}.png", img)
        save_tensor(out / f"kspace_{seed:05d}.tgt", op.forward(pair.target))
    save_tensor(out / "coil_maps.tgt", op.maps)
    return EXIT_OK


def cmd_mask(args) -> int:
    config = _load(args)
    mask = build_operator(config).mask
    out = _out_dir(args, config, "mask")
    _write_json(
        out / "mask.json",
        {
            "width": mask.width,
            "kept": np.flatnonzero(mask.kept).tolist(),
            "n_kept": mask.n_kept,
            "acceleration": mask.acceleration,
            "center_fraction": mask.center_fraction,
        },
    )
    h = config["phantom"]["shape"][0]
    save_png(out / "mask_image.png", np.tile(mask.kept.astype(float), (h, 1)))
    return EXIT_OK


def cmd_metrics(args) -> int:
    try:
        recon = rss(load_tensor(args.recon).astype(np.complex128))
        target = rss(load_tensor(args.target).astype(np.complex128))
    except (OSError, ValueError) as err:
        raise CLIError(EXIT_CONFIG, "input", str(err)) from None
    config = load_config(args.config) if args.config else None
    cfg = metric_config(config) if config else metric_config({})
    data_range = float(target.max())
    result = {
        "ssim_pct": 100.0 * ssim(recon, target, data_range, cfg),
        "psnr": psnr(recon, target, data_range),
        "nrmse": nrmse(recon, target),
    }
    try:
        result["ms_ssim_l1"] = ms_ssim_l1(recon, target, data_range, cfg)
    except ValueError as err:
        result["ms_ssim_l1"] = None
        result["ms_ssim_l1_error"] = str(err)
    text = json.dumps(result, indent=2, sort_keys=True, default=str)
    if args.out:
        out = _out_dir(args, None, "metrics")
        (out / "metrics.json").write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out", help="output directory (default: $TGVN_OUTPUT_ROOT/<name>)")
    common.add_argument("--seed", type=int, help="offset added to every seed in the config")
    common.add_argument("--threads", type=int, default=1, help="slices reconstructed concurrently")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="tgvn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="reconstruct, score and compare arms").set_defaults(func=cmd_run)
    p = sub.add_parser("compare", parents=[common], help="paired Wilcoxon comparison of two arms")
    p.add_argument("reports", nargs="+", help="one multi-arm report.json, or two reports")
    p.add_argument("--arm-a")
    p.add_argument("--arm-b")
    p.set_defaults(func=cmd_compare)
    sub.add_parser("spectrum", parents=[common], help="singular spectrum and threshold suggestions").set_defaults(
        func=cmd_spectrum
    )
    sub.add_parser("phantom", parents=[common], help="write phantoms, k-space and coil maps").set_defaults(
        func=cmd_phantom
    )
    sub.add_parser("mask", parents=[common], help="write the sampling mask").set_defaults(func=cmd_mask)
    p = sub.add_parser("metrics", parents=[common], help="score a reconstruction against a target")
    p.add_argument("--recon", required=True)
    p.add_argument("--target", required=True)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "compare" and len(args.reports) > 2:
        parser.error("compare takes one or two reports")
    try:
        return args.func(args)
    except CLIError as err:
        print(json.dumps({"error": err.kind, "message": str(err), "exit_code": err.code}), file=sys.stderr)
        return err.code
    except ConfigError as err:
        print(json.dumps({"error": "config", "message": str(err), "exit_code": EXIT_CONFIG}), file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001
        print(json.dumps({"error": "runtime", "message": f"{type(err).__name__}: {err}", "exit_code": EXIT_RUNTIME}),
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
