"""Singular spectra of materialized forward operators.

The threshold-selection helpers here are heuristics: nothing in the model
fixes how the ambiguous-space threshold should be chosen, so every suggested
value is labelled with the policy that produced it.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "SVDSpectrum",
    "svd_spectrum",
    "ambiguous_dim",
    "suggest_delta",
    "condition_number",
    "write_spectrum_csv",
    "spectrum_summary",
]


@dataclass(frozen=True, eq=False)
class SVDSpectrum:
    """Singular values (descending) with the null-space dimension.

    ``sigmas`` holds ``min(rows, cols)`` values; the first ``rank`` are the
    numerically nonzero ones. Domain directions outside the row space, all
    ``null_dim`` of them, have singular value zero. ``v`` columns are the
    right singular vectors for the full domain, when kept.
    """

    sigmas: np.ndarray
    null_dim: int
    rank: int | None = None
    n_cols: int | None = None
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        sigmas = np.asarray(self.sigmas, dtype=float)
        if np.any(sigmas < 0):
            raise ValueError("singular values must be nonnegative")
        if np.any(np.diff(sigmas) > 0):
            raise ValueError("singular values must be sorted descending")
        object.__setattr__(self, "sigmas", sigmas)
        if self.rank is None:
            object.__setattr__(self, "rank", _numerical_rank(sigmas, sigmas.size))
        if self.n_cols is None:
            object.__setattr__(self, "n_cols", self.rank + self.null_dim)

    @property
    def positive(self) -> np.ndarray:
        return self.sigmas[: self.rank]


def _numerical_rank(sigmas: np.ndarray, size: int) -> int:
    if sigmas.size == 0 or sigmas[0] == 0:
        return 0
    tol = sigmas[0] * max(size, 1) * np.finfo(float).eps
    return int(np.sum(sigmas > tol))


def svd_spectrum(dense: np.ndarray, vectors: bool = True) -> SVDSpectrum:
    """Full SVD of ``dense``; the rank cutoff follows ``numpy.linalg.matrix_rank``."""
    dense = np.asarray(dense)
    m, n = dense.shape
    if vectors:
        u, s, vh = np.linalg.svd(dense, full_matrices=True)
        v = vh.conj().T
    else:
        s = np.linalg.svd(dense, compute_uv=False)
        u = v = None
    rank = _numerical_rank(s, max(m, n))
    return SVDSpectrum(s, null_dim=n - rank, rank=rank, n_cols=n, u=u, v=v)


def ambiguous_dim(spec: SVDSpectrum, delta: float) -> int:
    """Number of domain directions with singular value strictly below ``delta``."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if delta == 0:
        return 0
    return int(np.sum(spec.positive < delta)) + spec.null_dim


def condition_number(spec: SVDSpectrum) -> float:
    """``sigma_max / sigma_min`` over the positive singular values."""
    pos = spec.positive
    if pos.size == 0:
        return math.inf
    return float(pos[0] / pos[-1])


def suggest_delta(spec: SVDSpectrum, policy: str = "gap", q: float = 0.25) -> float:
    """Heuristic threshold from the singular-value distribution.

    ``policy="quantile"`` returns the ``q``-quantile of the positive singular
    values. ``policy="gap"`` finds the largest ratio between consecutive
    positive singular values whose lower member sits at or below the median,
    and returns the geometric midpoint of that pair.
    """
    pos = spec.positive
    if policy == "quantile":
        if pos.size == 0:
            raise ValueError("spectrum has no positive singular values")
        return float(np.quantile(pos, q))
    if policy != "gap":
        raise ValueError(f"unknown policy {policy!r}")
    if pos.size < 2:
        raise ValueError("gap policy needs at least two positive singular values")
    median = np.median(pos)
    logs = np.log(pos)
    ratios = logs[:-1] - logs[1:]
    eligible = pos[1:] <= median
    if not eligible.any():
        raise ValueError("no spectral gap below the median")
    ratios = np.where(eligible, ratios, -np.inf)
    i = int(np.argmax(ratios))
    return float(np.exp(0.5 * (logs[i] + logs[i + 1])))


def write_spectrum_csv(spec: SVDSpectrum, path: str | Path) -> None:
    """One row per singular value: ``index, sigma``; null directions appended as zeros."""
    sig = np.concatenate([spec.positive, np.zeros(spec.null_dim)])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["index", "sigma"])
        for i, s in enumerate(sig):
            writer.writerow([i, repr(float(s))])


def spectrum_summary(spec: SVDSpectrum, q: float = 0.25) -> dict:
    """JSON-ready summary with both heuristic threshold suggestions."""
    suggestions = {}
    for policy in ("quantile", "gap"):
        try:
            delta = suggest_delta(spec, policy, q=q)
        except ValueError as err:
            suggestions[policy] = {"delta": None, "error": str(err)}
            continue
        sigma_max = float(spec.positive[0]) if spec.rank else 0.0
        suggestions[policy] = {
            "delta": delta,
            "heuristic": True,
            "ambiguous_dim": ambiguous_dim(spec, delta),
            # CG on (I + A^H A / delta^2) is unpreconditioned; this bounds its condition number
            "cg_condition_bound": 1.0 + sigma_max**2 / delta**2,
        }
    cond = condition_number(spec)
    return {
        "n_cols": spec.n_cols,
        "rank": spec.rank,
        "null_dim": spec.null_dim,
        "sigma_max": float(spec.positive[0]) if spec.rank else 0.0,
        "sigma_min_positive": float(spec.positive[-1]) if spec.rank else None,
        "condition_number": cond if math.isfinite(cond) else None,
        "quantile_q": q,
        "suggested_delta": suggestions,
    }
