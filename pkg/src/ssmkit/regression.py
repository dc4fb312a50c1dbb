"""Design points, the probability table, and its kernel-regression surface.

The table stores event probabilities pre-computed at design points; queries
are answered by a Gaussian-kernel weighted average (a convex combination,
so results stay within [0, 1] even far outside the covered region).  Design
points come from a rectangular grid or from a greedy cover of the dataset
guaranteeing every data point a design point within unit weighted distance.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .density import BandwidthMatrix
from .probability import ProbabilityEstimate

logger = logging.getLogger(__name__)

TABLE_FORMAT = "ssm-table"
TABLE_VERSION = 1


@dataclass(frozen=True)
class DesignPointSet:
    """Initial-situation vectors at which probabilities are pre-computed."""

    points: np.ndarray            # (N', d_x)
    weight_diag: np.ndarray       # diagonal of the coverage weight matrix Q
    source: str                   # "grid" | "greedy-cover"
    axes: tuple | None = None     # per-axis values when source == "grid"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)
        wd = np.asarray(self.weight_diag, dtype=float).ravel()
        object.__setattr__(self, "weight_diag", wd)
        if np.any(wd <= 0):
            raise ValueError("weight matrix diagonal must be positive")
        if wd.size != pts.shape[1]:
            raise ValueError("weight diagonal must match point dimension")
        if self.source not in ("grid", "greedy-cover"):
            raise ValueError("source must be 'grid' or 'greedy-cover'")
        if self.axes is not None:
            axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
            object.__setattr__(self, "axes", axes)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def axis_values(lo: float, hi: float, step: float) -> np.ndarray:
    if hi < lo:
        raise ValueError("axis needs min <= max")
    if lo == hi:
        return np.asarray([lo])
    if step <= 0:
        raise ValueError("axis needs step > 0")
    num = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(num)


def select_design_points_grid(axis_specs) -> DesignPointSet:
    """Cartesian grid, row-major (first axis slowest).

    The coverage weights are 1/step^2 so the default regression bandwidth
    Q^-1 reproduces the square-of-grid-step convention.
    """
    axes = [axis_values(*spec) for spec in axis_specs]
    steps = []
    for (lo, hi, step), vals in zip(axis_specs, axes):
        steps.append(step if len(vals) > 1 else 1.0)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    weights = 1.0 / np.square(steps)
    return DesignPointSet(points=points, weight_diag=weights, source="grid",
                          axes=tuple(axes))


def cover_satisfied(points: np.ndarray, dataset: np.ndarray,
                    weight_diag: np.ndarray, chunk: int = 4096) -> bool:
    """True when every dataset row has a design point within weighted
    squared distance one."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    root = np.sqrt(np.asarray(weight_diag, dtype=float))
    sp = points * root
    for start in range(0, dataset.shape[0], chunk):
        sd = dataset[start:start + chunk] * root
        d2 = ((sd[:, None, :] - sp[None, :, :]) ** 2).sum(axis=2)
        if np.any(d2.min(axis=1) > 1.0):
            return False
    return True


def select_design_points_cover(dataset_x, weight_diag) -> DesignPointSet:
    """Greedy single-pass cover in dataset order, then a verification pass."""
    dataset = np.atleast_2d(np.asarray(dataset_x, dtype=float))
    if dataset.shape[0] == 0:
        raise ValueError("dataset must be non-empty")
    wd = np.asarray(weight_diag, dtype=float).ravel()
    scaled = dataset * np.sqrt(wd)
    keep = kernels.greedy_cover(scaled)
    points = dataset[keep]
    result = DesignPointSet(points=points, weight_diag=wd, source="greedy-cover")
    if not cover_satisfied(points, dataset, wd):
        raise AssertionError("greedy cover failed its verification pass")
    return result


@dataclass(frozen=True)
class SsmTable:
    """Design points with estimated probabilities: the deployable measure."""

    design_points: DesignPointSet
    probabilities: np.ndarray
    nw_bandwidth: BandwidthMatrix
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=float).ravel()
        object.__setattr__(self, "probabilities", probs)
        if probs.size != self.design_points.count:
            raise ValueError("one probability per design point required")
        if np.any((probs < 0) | (probs > 1)):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.nw_bandwidth.dimension != self.design_points.dim:
            raise ValueError("bandwidth dimension must match design points")

    @property
    def points(self) -> np.ndarray:
        return self.design_points.points


def default_nw_bandwidth(points: DesignPointSet) -> BandwidthMatrix:
    """Q^-1: squared grid steps for grids, inverse cover weights otherwise."""
    return BandwidthMatrix(np.diag(1.0 / points.weight_diag))


def build_ssm_table(points: DesignPointSet,
                    estimator: Callable[[np.ndarray], ProbabilityEstimate],
                    nw_bandwidth: BandwidthMatrix | None = None,
                    metadata: dict | None = None,
                    threads: int = 1,
                    progress_every: int = 0) -> SsmTable:
    """Estimate the probability at every design point.

    Rows are independent; failures are re-raised with the point index.
    """
    if nw_bandwidth is None:
        nw_bandwidth = default_nw_bandwidth(points)
    probs = np.empty(points.count)

    def one(k: int) -> float:
        try:
            return estimator(points.points[k]).p_hat
        except Exception as exc:
            raise RuntimeError(f"estimator failed at design point {k}: {exc}") from exc

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for k, p in enumerate(pool.map(one, range(points.count))):
                probs[k] = p
                if progress_every and (k + 1) % progress_every == 0:
                    logger.info("estimated %d/%d design points", k + 1, points.count)
    else:
        for k in range(points.count):
            probs[k] = one(k)
            if progress_every and (k + 1) % progress_every == 0:
                logger.info("estimated %d/%d design points", k + 1, points.count)
    return SsmTable(design_points=points, probabilities=probs,
                    nw_bandwidth=nw_bandwidth, metadata=dict(metadata or {}))


def _diag_of(bandwidth: BandwidthMatrix) -> np.ndarray | None:
    m = bandwidth.matrix
    if np.count_nonzero(m - np.diag(np.diagonal(m))) == 0:
        return np.diagonal(m).copy()
    return None


def _nearest_value(table: SsmTable, x: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        diff = table.points - x
        d2 = np.einsum("ij,jk,ik->i", diff, table.nw_bandwidth.inverse, diff)
    return float(table.probabilities[int(np.argmin(d2))])


def nw_evaluate_batch(table: SsmTable, queries) -> np.ndarray:
    """Table value at each query row (always within [min p, max p])."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.shape[1] != table.design_points.dim:
        raise ValueError("query dimension does not match the table")
    diag = _diag_of(table.nw_bandwidth)
    if diag is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            out = kernels.nw_evaluate_many(table.points, table.probabilities,
                                           1.0 / diag, queries)
        bad = ~np.isfinite(out)
        if bad.any():
            # queries so remote that the weights overflowed: fall back to the
            # nearest design point's value
            logger.warning("nw_evaluate weight underflow on %d queries; "
                           "using nearest design point", int(bad.sum()))
            for i in np.nonzero(bad)[0]:
                out[i] = _nearest_value(table, queries[i])
        return out
    # generic full-bandwidth path
    inv = table.nw_bandwidth.inverse
    out = np.empty(queries.shape[0])
    for i, x in enumerate(queries):
        diff = table.points - x
        logw = -0.5 * np.einsum("ij,jk,ik->i", diff, inv, diff)
        peak = logw.max()
        if not np.isfinite(peak):
            logger.warning("nw_evaluate weight underflow; using nearest design point")
            out[i] = _nearest_value(table, x)
            continue
        w = np.exp(logw - peak)
        out[i] = float(w @ table.probabilities / w.sum())
    return out


def nw_evaluate(table: SsmTable, x) -> float:
    return float(nw_evaluate_batch(table, np.asarray(x, dtype=float)[None, :])[0])


def nw_gradient_batch(table: SsmTable, queries) -> np.ndarray:
    """Analytic gradient of the regression surface at each query row."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.shape[1] != table.design_points.dim:
        raise ValueError("query dimension does not match the table")
    diag = _diag_of(table.nw_bandwidth)
    if diag is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            out = kernels.nw_gradient_many(table.points, table.probabilities,
                                           1.0 / diag, queries)
        bad = ~np.all(np.isfinite(out), axis=1)
        if bad.any():
            logger.warning("nw_gradient weight underflow on %d queries; "
                           "returning zero vectors", int(bad.sum()))
            out[bad] = 0.0
        return out
    inv = table.nw_bandwidth.inverse
    out = np.empty_like(queries)
    for i, x in enumerate(queries):
        diff = table.points - x
        logw = -0.5 * np.einsum("ij,jk,ik->i", diff, inv, diff)
        peak = logw.max()
        if not np.isfinite(peak):
            logger.warning("nw_gradient weight underflow; returning zero vector")
            out[i] = 0.0
            continue
        w = np.exp(logw - peak)
        total = w.sum()
        p_hat = w @ table.probabilities / total
        out[i] = (w * (table.probabilities - p_hat)) @ (diff @ inv.T) / total
    return out


def nw_gradient(table: SsmTable, x) -> np.ndarray:
    return nw_gradient_batch(table, np.asarray(x, dtype=float)[None, :])[0]


def save_table(path, table: SsmTable) -> None:
    """Versioned JSON dump; floats use shortest round-trip repr, so loading
    restores bit-identical values."""
    bw = table.nw_bandwidth
    doc = {
        "format": TABLE_FORMAT,
        "version": TABLE_VERSION,
        "metadata": table.metadata,
        "source": table.design_points.source,
        "weight_diag": table.design_points.weight_diag.tolist(),
        "nw_bandwidth": {
            "kind": "scalar" if bw.is_scalar else "matrix",
            "h": bw.h,
            "matrix": bw.matrix.tolist(),
        },
        "axes": [a.tolist() for a in table.design_points.axes] if table.design_points.axes else None,
        "points": table.points.tolist(),
        "probabilities": table.probabilities.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_table(path) -> SsmTable:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != TABLE_FORMAT:
        raise ValueError(f"not an SSM table file: {path}")
    if doc.get("version") != TABLE_VERSION:
        raise ValueError(f"unsupported table version {doc.get('version')}")
    bw_doc = doc["nw_bandwidth"]
    if bw_doc["kind"] == "scalar":
        matrix = np.asarray(bw_doc["matrix"], dtype=float)
        bw = BandwidthMatrix(matrix, h=bw_doc["h"])
    else:
        bw = BandwidthMatrix(np.asarray(bw_doc["matrix"], dtype=float))
    axes = doc.get("axes")
    points = DesignPointSet(
        points=np.asarray(doc["points"], dtype=float),
        weight_diag=np.asarray(doc["weight_diag"], dtype=float),
        source=doc["source"],
        axes=tuple(np.asarray(a, dtype=float) for a in axes) if axes else None,
    )
    return SsmTable(design_points=points,
                    probabilities=np.asarray(doc["probabilities"], dtype=float),
                    nw_bandwidth=bw, metadata=doc.get("metadata", {}))
