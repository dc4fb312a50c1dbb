"""Quantitative validation of a derived measure.

Two tools: residual statistics against a closed-form reference over an
evaluation grid, and the risk-trend benchmark, which evaluates the partial
derivatives of the regression surface at every grid point and checks that
their signs follow the expected directions (more closing speed, more ego
speed, and more reaction time mean more risk; more gap and more braking
capability mean less).

For tables whose design points form the very grid being evaluated, the
kernel sums factor per axis, so all gradients are computed with a handful
of small tensor contractions instead of N'^2 kernel evaluations; the result
is identical to the generic path up to the far-kernel cutoff.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .regression import SsmTable, nw_evaluate_batch, nw_gradient_batch

# Derivatives this close to zero count as satisfying either direction
# (flat plateaus would otherwise be classified by rounding noise).
SIGN_TOLERANCE = 1e-12

PERCENTILE_STEPS = (1, 5, 10, 25, 50, 75, 90, 95, 99)


@dataclass(frozen=True)
class TrendSpec:
    variable_index: int
    expected_direction: str  # "increase" | "decrease"
    label: str = ""

    def __post_init__(self):
        if self.expected_direction not in ("increase", "decrease"):
            raise ValueError("expected_direction must be 'increase' or 'decrease'")


# The trend-mode input vector is [delta_v, v_ego, t_react, gap, madr].
DEFAULT_TRENDS = (
    TrendSpec(0, "increase", "delta_v"),
    TrendSpec(1, "increase", "v_ego"),
    TrendSpec(2, "increase", "t_react"),
    TrendSpec(3, "decrease", "gap"),
    TrendSpec(4, "decrease", "madr"),
)


@dataclass(frozen=True)
class TrendReport:
    trends: tuple
    percentiles: np.ndarray            # (n_trends, 11): min, 1..99, max
    correct_sign_fraction: np.ndarray  # (n_trends,)

    @property
    def labels(self) -> tuple:
        return tuple(t.label or f"x{t.variable_index}" for t in self.trends)


def _axis_kernels(axes, bdiag):
    mats = []
    dmats = []
    for vals, b in zip(axes, bdiag):
        diff = vals[None, :] - vals[:, None]  # [query, point]
        k = np.exp(-0.5 * diff * diff / b)
        mats.append(k)
        dmats.append(k * diff / b)
    return mats, dmats


def _apply(tensor: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    moved = np.tensordot(mat, tensor, axes=(1, axis))
    return np.moveaxis(moved, 0, axis)


def grid_nw_gradients(table: SsmTable) -> np.ndarray:
    """Gradient at every design point of a grid table (separable exact path)."""
    axes = table.design_points.axes
    if table.design_points.source != "grid" or axes is None:
        raise ValueError("separable gradients require a grid table")
    m = table.nw_bandwidth.matrix
    if np.count_nonzero(m - np.diag(np.diagonal(m))):
        raise ValueError("separable gradients require a diagonal bandwidth")
    bdiag = np.diagonal(m)
    shape = tuple(len(a) for a in axes)
    p = table.probabilities.reshape(shape)
    kmats, dmats = _axis_kernels(axes, bdiag)

    num = p
    den = np.ones(shape)
    for a, k in enumerate(kmats):
        num = _apply(num, k, a)
        den = _apply(den, k, a)
    p_hat = num / den

    grads = np.empty((int(np.prod(shape)), len(axes)))
    for a in range(len(axes)):
        numd = p
        dend = np.ones(shape)
        for b, k in enumerate(kmats):
            mat = dmats[b] if b == a else k
            numd = _apply(numd, mat, b)
            dend = _apply(dend, mat, b)
        grads[:, a] = ((numd - p_hat * dend) / den).ravel()
    return grads


def table_gradients(table: SsmTable, queries: np.ndarray | None = None) -> np.ndarray:
    """Gradients at the query rows, taking the separable path when exact."""
    if queries is None or queries is table.points:
        if table.design_points.source == "grid" and table.design_points.axes is not None:
            m = table.nw_bandwidth.matrix
            if np.count_nonzero(m - np.diag(np.diagonal(m))) == 0:
                return grid_nw_gradients(table)
        queries = table.points
    return nw_gradient_batch(table, queries)


def run_trend_benchmark(table: SsmTable, trends=DEFAULT_TRENDS,
                        grid_points: np.ndarray | None = None) -> TrendReport:
    """Percentiles and sign agreement of the partial derivatives."""
    dim = table.design_points.dim
    for spec in trends:
        if not (0 <= spec.variable_index < dim):
            raise ValueError(f"trend index {spec.variable_index} outside dimension {dim}")
    grads = table_gradients(table, grid_points)
    pct = np.empty((len(trends), len(PERCENTILE_STEPS) + 2))
    frac = np.empty(len(trends))
    for row, spec in enumerate(trends):
        d = grads[:, spec.variable_index]
        pct[row, 0] = d.min()
        pct[row, 1:-1] = np.percentile(d, PERCENTILE_STEPS)
        pct[row, -1] = d.max()
        if spec.expected_direction == "increase":
            frac[row] = float(np.mean(d >= -SIGN_TOLERANCE))
        else:
            frac[row] = float(np.mean(d <= SIGN_TOLERANCE))
    return TrendReport(trends=tuple(trends), percentiles=pct,
                       correct_sign_fraction=frac)


def trend_report_rows(report: TrendReport) -> list[list]:
    """Tabular layout: percentile rows (max at the top) by trend columns."""
    names = ["Maximum"] + [f"{p}th percentile" for p in reversed(PERCENTILE_STEPS)] + ["Minimum"]
    order = [len(PERCENTILE_STEPS) + 1] + list(range(len(PERCENTILE_STEPS), 0, -1)) + [0]
    rows = [["Expected trend"] + [t.expected_direction for t in report.trends]]
    for name, k in zip(names, order):
        rows.append([name] + [report.percentiles[i, k] for i in range(len(report.trends))])
    rows.append(["Correct sign fraction"] + list(report.correct_sign_fraction))
    return rows


def save_trend_report_csv(path, report: TrendReport, header_lines=()) -> None:
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("," + ",".join(report.labels) + "\n")
        for row in trend_report_rows(report):
            cells = [row[0]] + [c if isinstance(c, str) else repr(float(c)) for c in row[1:]]
            fh.write(",".join(cells) + "\n")


def save_trend_report_json(path, report: TrendReport, metadata: dict | None = None) -> None:
    doc = {
        "metadata": metadata or {},
        "variables": [
            {
                "label": label,
                "expected": spec.expected_direction,
                "correct_sign_fraction": float(frac),
                "percentiles": {
                    "min": float(report.percentiles[i, 0]),
                    **{str(p): float(report.percentiles[i, 1 + j])
                       for j, p in enumerate(PERCENTILE_STEPS)},
                    "max": float(report.percentiles[i, -1]),
                },
            }
            for i, (spec, label, frac) in enumerate(
                zip(report.trends, report.labels, report.correct_sign_fraction))
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


@dataclass(frozen=True)
class ComparisonReport:
    mean_abs_error: float
    max_abs_error: float
    residuals: np.ndarray
    table_values: np.ndarray
    reference_values: np.ndarray


def compare_to_reference(table: SsmTable, reference_fn, eval_points) -> ComparisonReport:
    """Residuals of the regression surface against a reference measure.

    ``reference_fn`` maps one query row to a probability.
    """
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float))
    estimates = nw_evaluate_batch(table, pts)
    ref = np.asarray([reference_fn(row) for row in pts], dtype=float)
    residuals = estimates - ref
    return ComparisonReport(
        mean_abs_error=float(np.mean(np.abs(residuals))),
        max_abs_error=float(np.max(np.abs(residuals))),
        residuals=residuals,
        table_values=estimates,
        reference_values=ref,
    )
