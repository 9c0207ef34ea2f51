"""Gaussian mode statistics and the Fréchet distance used as the domain gap.

The distance between two modes is computed between the Gaussians fitted to
their feature rows:

    ||mu_a - mu_b||^2 + Tr(Cov_a) + Tr(Cov_b) - 2 Tr((Cov_a^1/2 Cov_b Cov_a^1/2)^1/2)

The symmetric reformulation avoids taking the square root of the
non-symmetric product Cov_a Cov_b; negative eigenvalues from rounding are
clamped to zero and near-singular covariances get an eps ridge before use.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import (
    InsufficientSamplesError,
    NumericalError,
    ParameterError,
)

if TYPE_CHECKING:
    from .features import FeatureMatrix
    from .hierarchy import ModeTree

DEFAULT_EPS = 1e-6


@dataclass(eq=False)
class ModeStats:
    """Mean vector, covariance matrix and sample count of one mode."""

    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ParameterError(
                f"covariance shape {self.cov.shape} does not match mean dimension {self.mean.size}"
            )

    @property
    def d(self) -> int:
        return self.mean.size

    def validate(self, sym_tol: float = 1e-9, eig_tol: float = -1e-8) -> None:
        """Check symmetry and positive semi-definiteness up to numerical noise."""
        if self.count < 2:
            raise InsufficientSamplesError(f"mode statistics need count >= 2, got {self.count}")
        if not np.isfinite(self.mean).all() or not np.isfinite(self.cov).all():
            raise NumericalError("non-finite mode statistics")
        asym = float(np.abs(self.cov - self.cov.T).max()) if self.d else 0.0
        if asym > sym_tol:
            raise NumericalError(f"covariance asymmetry {asym:g} exceeds {sym_tol:g}")
        w_min = float(np.linalg.eigvalsh(self.cov).min())
        if w_min < eig_tol:
            raise NumericalError(f"covariance eigenvalue {w_min:g} below {eig_tol:g}")


def gaussian_stats(features: "FeatureMatrix", rows: Sequence[int] | np.ndarray) -> ModeStats:
    """Fit (mean, unbiased covariance, count) to the selected feature rows."""
    idx = np.asarray(rows, dtype=np.int64).reshape(-1)
    if idx.size < 2:
        raise InsufficientSamplesError(
            f"need at least 2 rows for Gaussian statistics, got {idx.size}"
        )
    x = features.values[idx].astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (idx.size - 1)
    cov = (cov + cov.T) / 2.0
    return ModeStats(mean=mean, cov=cov, count=int(idx.size))


def _ridged(cov: np.ndarray, eps: float) -> np.ndarray:
    """Return cov with an eps*I ridge when its smallest eigenvalue is below eps."""
    if float(np.linalg.eigvalsh(cov).min()) < eps:
        return cov + eps * np.eye(cov.shape[0])
    return cov


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return (root + root.T) / 2.0


def fid(a: ModeStats, b: ModeStats, eps: float = DEFAULT_EPS) -> float:
    """Fréchet distance between two Gaussian modes; clamped to be >= 0."""
    if a.d != b.d:
        raise ParameterError(f"dimension mismatch: {a.d} vs {b.d}")
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    cov_a = _ridged(a.cov, eps)
    cov_b = _ridged(b.cov, eps)
    delta = a.mean - b.mean
    try:
        root_a = _psd_sqrt(cov_a)
        inner = root_a @ cov_b @ root_a
        cross = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"covariance square root failed (d={a.d}, counts {a.count}/{b.count}): {exc}"
        ) from exc
    value = float(
        delta @ delta
        + np.trace(cov_a)
        + np.trace(cov_b)
        - 2.0 * np.sqrt(np.clip(cross, 0.0, None)).sum()
    )
    if not np.isfinite(value):
        raise NumericalError(
            f"non-finite Fréchet distance (|mu_a|={np.linalg.norm(a.mean):g}, "
            f"|mu_b|={np.linalg.norm(b.mean):g}, tr_a={np.trace(cov_a):g}, tr_b={np.trace(cov_b):g})"
        )
    return max(value, 0.0)


def thread_limit() -> int:
    """Worker cap for parallel sections; BMM_THREADS overrides the default."""
    raw = os.environ.get("BMM_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError as exc:
            raise ParameterError(f"BMM_THREADS must be an integer, got {raw!r}") from exc
    return min(4, os.cpu_count() or 1)


def cost_matrix(
    tree: "ModeTree", target_modes: Sequence[ModeStats], eps: float = DEFAULT_EPS
) -> np.ndarray:
    """L x H matrix of Fréchet distances, entry (y, x) = fid(target y, node x).

    Rows are filled independently (optionally across threads), so the result
    does not depend on the degree of parallelism.
    """
    node_stats = [node.stats for node in tree.nodes]
    n_targets = len(target_modes)
    if n_targets == 0:
        raise ParameterError("need at least one target mode")
    out = np.empty((n_targets, len(node_stats)), dtype=np.float64)

    def fill_row(y: int) -> None:
        t = target_modes[y]
        for x, s in enumerate(node_stats):
            out[y, x] = fid(t, s, eps=eps)

    workers = min(thread_limit(), n_targets)
    if workers <= 1:
        for y in range(n_targets):
            fill_row(y)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill_row, range(n_targets)))
    if not np.isfinite(out).all():
        y, x = np.argwhere(~np.isfinite(out))[0]
        raise NumericalError(f"non-finite cost for target mode {y} vs node {x}")
    return out


def write_cost_matrix_csv(
    path: str | Path,
    cost: np.ndarray,
    target_ids: Sequence[str],
    node_ids: Sequence[int],
) -> None:
    """Dump a cost matrix for inspection: one row per target mode, one column per node."""
    lines = ["target_id," + ",".join(f"node_{nid}" for nid in node_ids)]
    for y, tid in enumerate(target_ids):
        lines.append(f"{tid}," + ",".join(repr(float(v)) for v in cost[y]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
