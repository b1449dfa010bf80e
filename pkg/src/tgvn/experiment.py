"""Declarative phantom experiments.

An experiment config is a JSON document (schema: :data:`CONFIG_SCHEMA`,
unknown keys rejected) describing the phantoms, coils, masks, side
information and one or more reconstruction arms. :func:`run_experiment`
reconstructs every slice with every arm, scores the results and compares the
declared arm pairs with one-sided Wilcoxon tests.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .cg import CGConfig
from .data import (
    add_noise,
    covariance_matched_noise,
    make_coil_maps,
    make_mask,
    make_phantom_pair,
    misregister,
    save_png,
    save_tensor,
)
from .metrics import MetricConfig, nrmse, psnr, rss, ssim, wilcoxon_one_sided
from .operators import ForwardOp
from .plugins import RefinementSpec, SideMapSpec, fit_scalars, reconstruction_loss
from .plugins.blocks import identity_kernel
from .solver import CascadeConfig, run_cascade

__all__ = [
    "CONFIG_SCHEMA",
    "ConfigError",
    "load_config",
    "validate_config",
    "config_hash",
    "build_operator",
    "build_slice",
    "Slice",
    "build_cascade",
    "score",
    "run_experiment",
    "compare_arms",
    "METRIC_DIRECTIONS",
]

METRIC_DIRECTIONS = {"ssim_pct": "greater", "psnr": "greater", "nrmse": "less"}

_seed = {"type": "integer", "minimum": 0}
_num = {"type": "number"}


def _obj(properties, required=()):
    return {
        "type": "object",
        "properties": properties,
        "required": list(required),
        "additionalProperties": False,
    }


_per_step_number = {"oneOf": [{"type": "number", "minimum": 0}, {"type": "array", "items": {"type": "number", "minimum": 0}}]}

CONFIG_SCHEMA = _obj(
    {
        "name": {"type": "string", "minLength": 1},
        "output": {"type": "string"},
        "phantom": _obj(
            {
                "shape": {"type": "array", "items": {"type": "integer", "minimum": 16}, "minItems": 2, "maxItems": 2},
                "seeds": {"type": "array", "items": _seed, "minItems": 1, "uniqueItems": True},
                "n_ellipses": {"type": "integer", "minimum": 0},
            },
            ["shape", "seeds"],
        ),
        "coils": _obj({"count": {"type": "integer", "minimum": 1}, "seed": _seed}, ["count", "seed"]),
        "mask": _obj(
            {
                "kind": {"enum": ["random", "equispaced"]},
                "accel": {"type": "number", "minimum": 1},
                "center_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "seed": _seed,
            },
            ["kind", "accel", "center_fraction", "seed"],
        ),
        "noise": _obj({"sigma": {"type": "number", "minimum": 0}, "seed": _seed}, ["sigma", "seed"]),
        "side": _obj(
            {
                "treatment": {"enum": ["fully_sampled", "undersampled", "noise", "misregistered"]},
                "seed": _seed,
                "kind": {"enum": ["random", "equispaced"]},
                "accel": {"type": "number", "minimum": 1},
                "center_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "max_shift": {"type": "number", "minimum": 0},
                "max_rot": {"type": "number", "minimum": 0},
                "integer_shifts": {"type": "boolean"},
            },
            ["treatment", "seed"],
        ),
        "arms": {
            "type": "array",
            "minItems": 1,
            "items": _obj(
                {
                    "id": {"type": "string", "minLength": 1},
                    "mode": {"enum": ["varnet", "tgvn", "noproj"]},
                    "T": {"type": "integer", "minimum": 0},
                    "eta": _per_step_number,
                    "mu": _per_step_number,
                    "delta": {"type": "number", "exclusiveMinimum": 0},
                    "projector": {"enum": ["cg", "exact", "singlecoil"]},
                    "cg": _obj(
                        {
                            "max_iters": {"type": "integer", "minimum": 1},
                            "tol": {"type": "number", "exclusiveMinimum": 0},
                            "method": {"enum": ["cr", "cg"]},
                        }
                    ),
                    "refinement": _obj(
                        {
                            "kind": {"enum": ["zero", "tikhonov", "conv"]},
                            "lam": {"type": "number", "minimum": 0},
                            "kernel_size": {"enum": [1, 3, 5, 7]},
                        },
                        ["kind"],
                    ),
                    "sidemap": _obj(
                        {"kind": {"enum": ["identity", "linear", "oracle"]}, "kernel_size": {"enum": [1, 3, 5, 7]}},
                        ["kind"],
                    ),
                    "normalize_refinement": {"type": "boolean"},
                    "init": {"enum": ["adjoint", "zero"]},
                    "fit": _obj(
                        {
                            "free": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                            "train_seeds": {"type": "array", "items": _seed, "minItems": 1},
                            "loss": {"enum": ["l2", "ms-ssim-l1"]},
                            "budget": {"type": "integer", "minimum": 1},
                            "seed": _seed,
                        },
                        ["free", "train_seeds", "seed"],
                    ),
                },
                ["id", "mode", "T"],
            ),
        },
        "metrics": _obj(
            {
                "ssim_window": {"type": "integer", "minimum": 1},
                "ssim_k1": _num,
                "ssim_k2": _num,
                "msssim_window": {"type": "integer", "minimum": 1},
                "msssim_sigmas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "msssim_alpha": {"type": "number", "minimum": 0, "maximum": 1},
                "msssim_uniform": {"type": "boolean"},
                "msssim_downsample": {"type": "boolean"},
            }
        ),
        "compare": {
            "type": "array",
            "items": _obj({"a": {"type": "string"}, "b": {"type": "string"}}, ["a", "b"]),
        },
        "spectrum": _obj(
            {"quantile": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}, "max_entries": {"type": "integer", "minimum": 1}}
        ),
    },
    ["name", "phantom", "coils", "mask", "arms"],
)


class ConfigError(ValueError):
    pass


def validate_config(config: dict) -> dict:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}") from None
    ids = [arm["id"] for arm in config["arms"]]
    if len(set(ids)) != len(ids):
        raise ConfigError("arm identifiers must be unique")
    for pair in config.get("compare", []):
        for key in ("a", "b"):
            if pair[key] not in ids:
                raise ConfigError(f"compare refers to unknown arm {pair[key]!r}")
    for arm in config["arms"]:
        T = arm["T"]
        for key in ("eta", "mu"):
            if isinstance(arm.get(key), list) and len(arm[key]) != T:
                raise ConfigError(f"arm {arm['id']!r}: {key} needs {T} entries")
        if arm["mode"] != "varnet" and "side" not in config and arm.get("sidemap", {}).get("kind") != "oracle":
            raise ConfigError(f"arm {arm['id']!r} needs a 'side' section")
    side = config.get("side")
    if side and side["treatment"] == "undersampled":
        for key in ("kind", "accel", "center_fraction"):
            if key not in side:
                raise ConfigError(f"side/{key} is required for undersampled side information")
    return config


def load_config(path: str | Path) -> dict:
    try:
        config = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return validate_config(config)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def offset_seeds(config: dict, offset: int) -> dict:
    """Copy of ``config`` with ``offset`` added to every seed."""
    config = copy.deepcopy(config)
    config["phantom"]["seeds"] = [s + offset for s in config["phantom"]["seeds"]]
    for section in ("coils", "mask", "noise", "side"):
        if section in config:
            config[section]["seed"] += offset
    for arm in config["arms"]:
        if "fit" in arm:
            arm["fit"]["train_seeds"] = [s + offset for s in arm["fit"]["train_seeds"]]
            arm["fit"]["seed"] += offset
    return config


def metric_config(config: dict) -> MetricConfig:
    kw = dict(config.get("metrics", {}))
    if "msssim_sigmas" in kw:
        kw["msssim_sigmas"] = tuple(kw["msssim_sigmas"])
    return MetricConfig(**kw)


def build_operator(config: dict) -> ForwardOp:
    shape = tuple(config["phantom"]["shape"])
    maps = make_coil_maps(config["coils"]["count"], shape, config["coils"]["seed"])
    m = config["mask"]
    mask = make_mask(shape[1], m["kind"], m["accel"], m["center_fraction"], m["seed"])
    return ForwardOp(maps, mask)


@dataclass(frozen=True, eq=False)
class Slice:
    seed: int
    k: np.ndarray
    side: np.ndarray | None
    truth: np.ndarray


def build_slice(config: dict, op: ForwardOp, seed: int) -> Slice:
    """Phantom, measurements and side information for one slice."""
    shape = tuple(config["phantom"]["shape"])
    pair = make_phantom_pair(seed, shape, n_ellipses=config["phantom"].get("n_ellipses", 8))
    k = op.forward(pair.target)
    noise = config.get("noise")
    if noise and noise["sigma"] > 0:
        k = add_noise(k, op.mask, noise["sigma"], noise["seed"] + seed)

    side = None
    spec = config.get("side")
    if spec is not None:
        full = ForwardOp(op.maps, make_mask(shape[1], "equispaced", 1, 0.0))
        side_full = full.adjoint(full.forward(pair.side))
        treatment = spec["treatment"]
        side_seed = spec["seed"] + seed
        if treatment == "fully_sampled":
            side = side_full
        elif treatment == "undersampled":
            side_mask = make_mask(shape[1], spec["kind"], spec["accel"], spec["center_fraction"], spec["seed"])
            side_op = ForwardOp(op.maps, side_mask)
            side = side_op.adjoint(side_op.forward(pair.side))
        elif treatment == "noise":
            side = covariance_matched_noise(side_full, side_seed)
        else:
            side = misregister(
                side_full,
                side_seed,
                spec.get("max_shift", 4.0),
                spec.get("max_rot", 4.0),
                spec.get("integer_shifts", False),
            )
    return Slice(seed, k, side, pair.target)


def build_cascade(arm: dict) -> CascadeConfig:
    ref = arm.get("refinement", {"kind": "zero"})
    refinement = RefinementSpec(
        kind=ref["kind"], lam=ref.get("lam", 0.0), kernel=identity_kernel(ref.get("kernel_size", 1))
    )
    sm = arm.get("sidemap", {"kind": "identity"})
    if sm["kind"] == "oracle":
        sidemap = SideMapSpec.oracle()
    else:
        sidemap = SideMapSpec(kind=sm["kind"], kernel=identity_kernel(sm.get("kernel_size", 1)))
    cg = CGConfig(**arm.get("cg", {}))
    T = arm["T"]
    return CascadeConfig(
        T=T,
        mode=arm["mode"],
        eta=arm.get("eta", 1.0) if not isinstance(arm.get("eta"), list) else tuple(arm["eta"]),
        mu=arm.get("mu", 0.1) if not isinstance(arm.get("mu"), list) else tuple(arm["mu"]),
        delta=arm.get("delta", 1.0 / 3.0),
        refinement=refinement,
        sidemap=sidemap,
        cg=cg,
        projector=arm.get("projector", "cg"),
        normalize_refinement=arm.get("normalize_refinement", False),
        init=arm.get("init", "adjoint"),
    )


def score(x: np.ndarray, truth: np.ndarray, op: ForwardOp, cfg: MetricConfig) -> dict:
    """SSIM (percent), PSNR (dB) and NRMSE between RSS coil combinations."""
    recon = rss(op.maps * x)
    target = rss(op.maps * truth)
    data_range = float(target.max())
    return {
        "ssim_pct": 100.0 * ssim(recon, target, data_range, cfg),
        "psnr": psnr(recon, target, data_range),
        "nrmse": nrmse(recon, target),
    }


def _sem(values) -> float | None:
    values = np.asarray(values, dtype=float)
    if values.size < 2 or not np.all(np.isfinite(values)):
        return None
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def compare_arms(per_slice_a: dict, per_slice_b: dict) -> list[dict]:
    """One-sided Wilcoxon tests of ``a - b`` for every metric.

    Degenerate comparisons (all differences zero) are reported with an
    ``error`` entry rather than raised.
    """
    rows = []
    for metric, direction in METRIC_DIRECTIONS.items():
        a = np.asarray(per_slice_a[metric], dtype=float)
        b = np.asarray(per_slice_b[metric], dtype=float)
        diffs = a - b
        row = {"metric": metric, "direction": direction, "n": int(diffs.size)}
        try:
            res = wilcoxon_one_sided(diffs, direction)
        except ValueError as err:
            row.update(statistic=None, p_value=None, n_effective=0, method=None, error=str(err))
        else:
            row.update(statistic=res.statistic, p_value=res.p_value, n_effective=res.n_effective, method=res.method)
        rows.append(row)
    return rows


def _fit_arm(arm: dict, cfg: CascadeConfig, config: dict, op: ForwardOp):
    fit = arm["fit"]
    pairs = []
    for seed in fit["train_seeds"]:
        sl = build_slice(config, op, seed)
        pairs.append((sl.k, sl.side, sl.truth))
    report = fit_scalars(
        pairs,
        op,
        cfg,
        free=fit["free"],
        loss=fit.get("loss", "l2"),
        budget=fit.get("budget", 200),
        seed=fit["seed"],
        metric_cfg=metric_config(config),
    )
    summary = {
        "params": report.params,
        "loss": report.loss,
        "initial_loss": report.initial_loss,
        "mu_over_eta": {str(t): r for t, r in report.mu_over_eta.items()},
        "n_evals": report.n_evals,
        "budget_exhausted": report.budget_exhausted,
        "train_seeds": list(fit["train_seeds"]),
        "seed": fit["seed"],
    }
    return report.config, summary


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_float) + "\n")


def run_experiment(config: dict, out_dir: str | Path | None = None, threads: int = 1) -> dict:
    """Run all arms on all slices and return the report dictionary.

    With ``out_dir`` set, writes per-arm reconstructions (TensorFile + PNG),
    traces, ``report.json``, ``report.csv`` and ``manifest.json``. A failing
    arm is recorded under ``errors`` and the remaining arms still run; the
    caller decides the exit status.
    """
    config = validate_config(config)
    mcfg = metric_config(config)
    op = build_operator(config)
    seeds = list(config["phantom"]["seeds"])
    slices = [build_slice(config, op, s) for s in seeds]
    out = Path(out_dir) if out_dir is not None else None
    written: list[str] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    arms_report = {}
    errors = []
    for arm in config["arms"]:
        arm_id = arm["id"]
        try:
            cfg = build_cascade(arm)
            fit_summary = None
            if "fit" in arm:
                cfg, fit_summary = _fit_arm(arm, cfg, config, op)

            def recon(sl: Slice):
                x, trace = run_cascade(cfg.bind_oracle(sl.truth), op, sl.k, sl.side)
                return x, trace, score(x, sl.truth, op, mcfg)

            if threads > 1:
                with ThreadPoolExecutor(threads) as pool:
                    results = list(pool.map(recon, slices))
            else:
                results = [recon(sl) for sl in slices]

            per_slice = {m: [r[2][m] for r in results] for m in METRIC_DIRECTIONS}
            arms_report[arm_id] = {
                "mode": cfg.mode,
                "T": cfg.T,
                "eta": list(cfg.eta),
                "mu": list(cfg.mu) if cfg.mode != "varnet" else None,
                "delta": cfg.delta if cfg.mode == "tgvn" else None,
                "per_slice": per_slice,
                "summary": {
                    m: {"mean": float(np.mean(v)), "sem": _sem(v)} for m, v in per_slice.items()
                },
                "fit": fit_summary,
            }
            if out is not None:
                arm_dir = out / "arms" / arm_id
                arm_dir.mkdir(parents=True, exist_ok=True)
                for sl, (x, trace, _) in zip(slices, results):
                    stem = arm_dir / f"slice_{sl.seed:05d}"
                    save_tensor(stem.with_suffix(".tgt"), x)
                    save_png(stem.with_suffix(".png"), rss(op.maps * x))
                    _write_json(
                        arm_dir / f"trace_{sl.seed:05d}.json",
                        {"dc_residuals": trace.dc_residuals, "guidance_norms": trace.guidance_norms},
                    )
                    written += [str(p.relative_to(out)) for p in (
                        stem.with_suffix(".tgt"), stem.with_suffix(".png"), stem.with_suffix(".json"),
                        arm_dir / f"trace_{sl.seed:05d}.json",
                    )]
        except Exception as err:  # noqa: BLE001 - recorded per arm, surfaced via exit status
            errors.append({"arm": arm_id, "type": type(err).__name__, "message": str(err)})

    comparisons = []
    for pair in config.get("compare", []):
        a, b = pair["a"], pair["b"]
        if a not in arms_report or b not in arms_report:
            continue
        for row in compare_arms(arms_report[a]["per_slice"], arms_report[b]["per_slice"]):
            comparisons.append({"a": a, "b": b, **row})

    report = {
        "name": config["name"],
        "config_sha256": config_hash(config),
        "slices": seeds,
        "seeds": {
            "phantom": seeds,
            "coils": config["coils"]["seed"],
            "mask": config["mask"]["seed"],
            "noise": config.get("noise", {}).get("seed"),
            "side": config.get("side", {}).get("seed"),
        },
        "versions": {"tgvn": __version__, "numpy": np.__version__},
        "arms": arms_report,
        "comparisons": comparisons,
        "errors": errors,
    }
    if out is not None:
        _write_json(out / "report.json", report)
        _write_report_csv(out / "report.csv", report)
        written += ["report.json", "report.csv"]
        _write_json(
            out / "manifest.json",
            {"status": "error" if errors else "ok", "files": sorted(written), "errors": errors},
        )
    return report


def _write_report_csv(path: Path, report: dict) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["arm", "slice", *METRIC_DIRECTIONS])
        for arm_id, arm in report["arms"].items():
            for i, seed in enumerate(report["slices"]):
                writer.writerow([arm_id, seed, *(repr(float(arm["per_slice"][m][i])) for m in METRIC_DIRECTIONS)])


def default_output_root() -> Path:
    return Path(os.environ.get("TGVN_OUTPUT_ROOT", "out"))


def relevance_probe(
    seed: int,
    shape: tuple[int, int] = (64, 64),
    n_coils: int = 4,
    accel: float = 8,
    center_fraction: float = 0.06,
    n_train: int = 2,
    n_val: int = 2,
    budget: int = 200,
    rtol: float = 1e-6,
) -> dict:
    """Single-step fits measuring how much weight side information earns.

    Three arms share the measurements and the starting point: a trust-guided
    step with the ground truth as side information, one with zero-mean
    complex Gaussian noise whose channel covariance matches the ground
    truth's, and a plain data-consistency step (``mu = 0``). Each arm fits
    its weights on ``n_train`` phantoms; the fitted configs are scored on
    ``n_val`` held-out phantoms.
    """
    maps = make_coil_maps(n_coils, shape, seed)
    op = ForwardOp(maps, make_mask(shape[1], "random", accel, center_fraction, seed))
    base = 10_000 * (seed + 1)
    train = [make_phantom_pair(base + i, shape) for i in range(n_train)]
    val = [make_phantom_pair(base + 1000 + i, shape) for i in range(n_val)]

    def pairs(phantoms, side):
        out = []
        for p in phantoms:
            k = op.forward(p.target)
            if side == "oracle":
                s = p.target
            elif side == "noise":
                s = covariance_matched_noise(p.target, p.seed + 7)
            else:
                s = None
            out.append((k, s, p.target))
        return out

    arms = {
        "oracle": (CascadeConfig(T=1, mode="tgvn"), ("eta", "mu")),
        "noise": (CascadeConfig(T=1, mode="tgvn"), ("eta", "mu")),
        "varnet": (CascadeConfig(T=1, mode="varnet"), ("eta",)),
    }
    result = {"seed": seed}
    for name, (template, free) in arms.items():
        report = fit_scalars(pairs(train, name), op, template, free=free, budget=budget, seed=seed, rtol=rtol)
        val_loss = 0.0
        for k, s, truth in pairs(val, name):
            x, _ = run_cascade(report.config, op, k, s)
            val_loss += reconstruction_loss(x, truth)
        result[name] = {
            "eta": report.config.eta[0],
            "mu": report.config.mu[0] if name != "varnet" else 0.0,
            "mu_over_eta": report.mu_over_eta.get(0) if name != "varnet" else 0.0,
            "train_loss": report.loss,
            "val_loss": val_loss / n_val,
            "n_evals": report.n_evals,
        }
    return result
