"""Derivative-free fitting of cascade scalars.

Free parameters are addressed by name:

==========================  ==========================================
``eta.t`` / ``mu.t``        data-consistency / trust-guidance weight of step t
``lambda.t``                Tikhonov weight of step t's refinement block
``delta``                   ambiguous-space threshold (shared by all steps)
``refinement_kernel.t.i.j.re``  real (or ``im``) part of a conv kernel entry
``sidemap_kernel.t.i.j.re``     same for a linear side map
==========================  ==========================================

A bare prefix (``"eta"``, ``"mu"``, ``"lambda"``, ``"refinement_kernel"``,
``"sidemap_kernel"``) expands to every step or entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..metrics import MetricConfig, ms_ssim_l1
from ..operators import ForwardOp
from ..solver import CascadeConfig, NonFiniteError, run_cascade

__all__ = ["FitReport", "fit_scalars", "expand_free", "reconstruction_loss"]

LOSSES = ("l2", "ms-ssim-l1")
_NONNEG = ("eta", "mu", "lambda")
DELTA_MIN = 1e-6


@dataclass
class FitReport:
    params: dict[str, float]
    config: CascadeConfig
    loss: float
    initial_loss: float
    mu_over_eta: dict[int, float]
    seed: int
    n_evals: int
    budget_exhausted: bool
    history: list[float] = field(default_factory=list)


def expand_free(free: Iterable[str], cfg: CascadeConfig) -> list[str]:
    names = []
    for item in free:
        head = item.split(".")[0]
        if head in ("eta", "mu", "lambda") and "." not in item:
            names += [f"{head}.{t}" for t in range(cfg.T)]
        elif head in ("refinement_kernel", "sidemap_kernel") and "." not in item:
            specs = cfg.refinement if head == "refinement_kernel" else cfg.sidemap
            for t, spec in enumerate(specs):
                n = spec.kernel.shape[0]
                names += [
                    f"{head}.{t}.{i}.{j}.{part}"
                    for i in range(n)
                    for j in range(n)
                    for part in ("re", "im")
                ]
        else:
            names.append(item)
    for name in names:
        _get(cfg, name)  # validates the name
    return list(dict.fromkeys(names))


def _get(cfg: CascadeConfig, name: str) -> float:
    parts = name.split(".")
    head = parts[0]
    try:
        if head == "delta" and len(parts) == 1:
            return cfg.delta
        t = int(parts[1])
        if head in ("eta", "mu") and len(parts) == 2:
            return getattr(cfg, head)[t]
        if head == "lambda" and len(parts) == 2:
            return cfg.refinement[t].lam
        if head in ("refinement_kernel", "sidemap_kernel") and len(parts) == 5:
            spec = (cfg.refinement if head == "refinement_kernel" else cfg.sidemap)[t]
            value = spec.kernel[int(parts[2]), int(parts[3])]
            return {"re": value.real, "im": value.imag}[parts[4]]
    except (IndexError, ValueError, KeyError):
        pass
    raise ValueError(f"unknown free parameter {name!r}")


def _set(cfg: CascadeConfig, values: dict[str, float]) -> CascadeConfig:
    eta, mu = list(cfg.eta), list(cfg.mu)
    refinement, sidemap = list(cfg.refinement), list(cfg.sidemap)
    delta = cfg.delta
    for name, v in values.items():
        parts = name.split(".")
        head = parts[0]
        if head == "delta":
            delta = v
            continue
        t = int(parts[1])
        if head == "eta":
            eta[t] = v
        elif head == "mu":
            mu[t] = v
        elif head == "lambda":
            refinement[t] = refinement[t].with_params(lam=v)
        else:
            specs = refinement if head == "refinement_kernel" else sidemap
            kernel = specs[t].kernel.copy()
            i, j = int(parts[2]), int(parts[3])
            if parts[4] == "re":
                kernel[i, j] = v + 1j * kernel[i, j].imag
            else:
                kernel[i, j] = kernel[i, j].real + 1j * v
            specs[t] = specs[t].with_params(kernel=kernel)
    return cfg.replace(
        eta=tuple(eta), mu=tuple(mu), delta=delta, refinement=tuple(refinement), sidemap=tuple(sidemap)
    )


def _bounds(name: str) -> tuple[float, float]:
    head = name.split(".")[0]
    if head in _NONNEG:
        return 0.0, math.inf
    if head == "delta":
        return DELTA_MIN, math.inf
    return -math.inf, math.inf


def reconstruction_loss(
    x: np.ndarray, target: np.ndarray, loss: str = "l2", metric_cfg: MetricConfig = MetricConfig()
) -> float:
    """Loss between magnitude images.

    ``l2`` is the squared error relative to the target energy; ``ms-ssim-l1``
    uses the target's maximum as the data range.
    """
    a, b = np.abs(x), np.abs(target)
    if loss == "l2":
        return float(np.sum((a - b) ** 2) / np.sum(b**2))
    if loss == "ms-ssim-l1":
        return ms_ssim_l1(a, b, data_range=float(b.max()), cfg=metric_cfg)
    raise ValueError(f"loss must be one of {LOSSES}")


class _BudgetExhausted(Exception):
    pass


def fit_scalars(
    train_pairs: Sequence[tuple[np.ndarray, np.ndarray | None, np.ndarray]],
    op: ForwardOp,
    template: CascadeConfig,
    free: Iterable[str] = ("eta",),
    loss: str = "l2",
    budget: int = 200,
    seed: int = 0,
    rtol: float = 1e-6,
    fd_step: float = 1e-3,
    max_sweeps: int = 50,
    metric_cfg: MetricConfig = MetricConfig(),
) -> FitReport:
    """Coordinate descent over named cascade scalars.

    Each coordinate takes a Newton step built from central finite differences
    of the training loss, backtracking (or expanding, when the local curvature
    is not positive) until the loss decreases. Coordinates are visited in a
    seeded random order each sweep. Sweeps stop when the relative improvement
    falls below ``rtol``. Running out of ``budget`` loss evaluations returns
    the best point found with ``budget_exhausted=True``.

    Oracle side maps are bound to each pair's ground truth.
    """
    if not train_pairs:
        raise ValueError("need at least one training pair")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if loss not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}")
    names = expand_free(free, template)
    rng = np.random.default_rng(seed)

    cache: dict[tuple, float] = {}
    n_evals = 0

    def objective(values: dict[str, float]) -> float:
        nonlocal n_evals
        key = tuple(values[n] for n in names)
        if key in cache:
            return cache[key]
        if n_evals >= budget:
            raise _BudgetExhausted
        n_evals += 1
        cfg = _set(template, values)
        total = 0.0
        try:
            for k, s, truth in train_pairs:
                x, _ = run_cascade(cfg.bind_oracle(truth), op, k, s)
                total += reconstruction_loss(x, truth, loss, metric_cfg)
            value = total / len(train_pairs)
        except (NonFiniteError, FloatingPointError):
            value = math.inf
        if not math.isfinite(value):
            value = math.inf
        cache[key] = value
        return value

    best = {n: float(_get(template, n)) for n in names}
    initial = objective(best)
    if not math.isfinite(initial):
        raise ValueError("loss is non-finite at the initial point")
    best_f = initial
    history = [initial]
    exhausted = False

    def consider(values, f):
        nonlocal best, best_f
        if f < best_f:
            best, best_f = dict(values), f
            return True
        return False

    try:
        for _ in range(max_sweeps):
            start_f = best_f
            for idx in rng.permutation(len(names)):
                name = names[idx]
                _coordinate_search(name, best, best_f, objective, consider, fd_step)
            history.append(best_f)
            if start_f - best_f <= rtol * abs(start_f) + 1e-300:
                break
    except _BudgetExhausted:
        exhausted = True
        history.append(best_f)

    cfg = _set(template, best)
    ratios = {t: cfg.mu[t] / cfg.eta[t] for t in range(cfg.T) if cfg.eta[t] > 0}
    return FitReport(
        params=dict(best),
        config=cfg,
        loss=best_f,
        initial_loss=initial,
        mu_over_eta=ratios,
        seed=seed,
        n_evals=n_evals,
        budget_exhausted=exhausted,
        history=history,
    )


def _coordinate_search(name, point, f0, objective, consider, fd_step):
    lo, hi = _bounds(name)
    p = point[name]
    h = fd_step * max(abs(p), 0.1)

    def at(v):
        trial = dict(point)
        trial[name] = min(max(v, lo), hi)
        f = objective(trial)
        consider(trial, f)
        return f

    if p - h >= lo:
        fm, fp = at(p - h), at(p + h)
        g = (fp - fm) / (2 * h)
        c = (fp - 2 * f0 + fm) / h**2
    else:
        f1, f2 = at(p + h), at(p + 2 * h)
        g = (-3 * f0 + 4 * f1 - f2) / (2 * h)
        c = (f0 - 2 * f1 + f2) / h**2
    if not (math.isfinite(g) and math.isfinite(c)) or g == 0:
        return

    if c > 0:
        step = -g / c
        for _ in range(8):
            if at(p + step) < f0:
                return
            step *= 0.5
        return

    step = -math.copysign(max(4 * h, 0.5 * abs(p)), g)
    prev = f0
    for _ in range(10):
        f = at(p + step)
        if f >= prev:
            return
        prev = f
        step *= 2
