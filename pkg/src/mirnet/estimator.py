"""Histogram-based mutual information rate between channel pairs.

All logarithms are natural, so MI is in nats and rates in nats/iteration.
The pipeline entry point is :func:`estimate_mir`.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from numba import njit

from .datagen import SeriesMatrix

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 1
MIN_GRID_FRACTION = 0.2
WORKERS_ENV = "MIRNET_WORKERS"


class EstimationError(ValueError):
    pass


# --------------------------------------------------------------- binning


def bin_indices(x: np.ndarray, n: int) -> np.ndarray:
    """Equal-width bin index in [0, n) over [min, max]; the max lands in bin n-1.

    A constant series maps entirely to bin 0.
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros(x.shape, dtype=np.int64)
    idx = np.floor((x - lo) / (hi - lo) * n).astype(np.int64)
    np.clip(idx, 0, n - 1, out=idx)
    return idx


def rescale_unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


@dataclass
class JointHistogram:
    """Occupancy counts on an N x N grid; ``counts[j, i]`` is y-bin j, x-bin i.

    Row sums are the Y marginal counts, column sums the X marginal counts.
    """

    grid_size: int
    counts: np.ndarray
    total: int
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    degenerate_axes: tuple[str, ...] = ()

    @property
    def degenerate(self) -> bool:
        return bool(self.degenerate_axes)

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total

    def occupied(self) -> int:
        return int(np.count_nonzero(self.counts))


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise EstimationError(f"series lengths differ ({x.size} vs {y.size})")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise EstimationError("series contain non-finite values")
    return x, y


def build_joint_histogram(x, y, n: int) -> JointHistogram:
    x, y = _check_pair(x, y)
    if n < 2:
        raise EstimationError(f"grid size must be >= 2, got {n}")
    if x.size < n:
        raise EstimationError(f"series length {x.size} is below grid size {n}")
    bx, by = bin_indices(x, n), bin_indices(y, n)
    counts = np.bincount(by * n + bx, minlength=n * n).reshape(n, n)
    degenerate = tuple(
        name for name, s in (("x", x), ("y", y)) if s.max() == s.min()
    )
    return JointHistogram(
        grid_size=n,
        counts=counts,
        total=int(x.size),
        x_range=(float(x.min()), float(x.max())),
        y_range=(float(y.min()), float(y.max())),
        degenerate_axes=degenerate,
    )


# ------------------------------------------------------------- entropies


def _entropy_from_counts(counts: np.ndarray, total: int) -> float:
    c = counts[counts > 0].astype(np.float64)
    p = c / total
    return float(-np.sum(p * np.log(p)))


def marginal_entropy(hist: JointHistogram, axis: str = "x") -> float:
    if axis == "x":
        counts = hist.counts.sum(axis=0)
    elif axis == "y":
        counts = hist.counts.sum(axis=1)
    else:
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    return _entropy_from_counts(counts, hist.total)


def joint_entropy(hist: JointHistogram) -> float:
    return _entropy_from_counts(hist.counts, hist.total)


def mutual_information(hist: JointHistogram) -> float:
    return marginal_entropy(hist, "x") + marginal_entropy(hist, "y") - joint_entropy(hist)


# ------------------------------------------------------------- grid range


def occupancy_ok(n_points: int, n_occupied: int) -> bool:
    """Mean points per occupied cell is at least the number of occupied cells."""
    return n_points / n_occupied >= n_occupied


def max_grid_size(x, y, cap: int | None = None) -> int:
    """Largest N reached by scanning upward from 2 while the occupancy test holds."""
    x, y = _check_pair(x, y)
    limit = cap if cap is not None else min(x.size, 4096)
    best = None
    n = 2
    while n <= limit:
        bx, by = bin_indices(x, n), bin_indices(y, n)
        n_oc = np.count_nonzero(np.bincount(by * n + bx, minlength=n * n))
        if not occupancy_ok(x.size, n_oc):
            break
        best = n
        n += 1
    if best is None:
        raise EstimationError("insufficient data: occupancy condition fails at N=2")
    return best


def grid_sizes(n_max: int) -> list[int]:
    lo = max(2, math.ceil(MIN_GRID_FRACTION * n_max))
    return list(range(lo, n_max + 1))


# ------------------------------------------------------- expansion rate


@njit(cache=True)
def _cross(o0, o1, a0, a1, b0, b1):
    return (a0 - o0) * (b1 - o1) - (a1 - o1) * (b0 - o0)


@njit(cache=True)
def _sorted_diameter(px, py):
    """Diameter of points already sorted by (x, y), via the monotone-chain hull."""
    n = px.size
    if n < 2:
        return 0.0
    hull = np.empty(2 * n, dtype=np.int64)
    k = 0
    for i in range(n):
        while k >= 2 and _cross(px[hull[k - 2]], py[hull[k - 2]], px[hull[k - 1]],
                                py[hull[k - 1]], px[i], py[i]) <= 0.0:
            k -= 1
        hull[k] = i
        k += 1
    lower = k + 1
    for i in range(n - 2, -1, -1):
        while k >= lower and _cross(px[hull[k - 2]], py[hull[k - 2]], px[hull[k - 1]],
                                    py[hull[k - 1]], px[i], py[i]) <= 0.0:
            k -= 1
        hull[k] = i
        k += 1
    best = 0.0
    for a in range(k - 1):
        ia = hull[a]
        for b in range(a + 1, k - 1):
            ib = hull[b]
            dx = px[ia] - px[ib]
            dy = py[ia] - py[ib]
            d = dx * dx + dy * dy
            if d > best:
                best = d
    return np.sqrt(best)


@njit(cache=True)
def _hull_candidates(px, py):
    """Drop points strictly inside the octagon of the 8 directional extremes.

    Those points cannot be hull vertices, so the diameter is unchanged.
    """
    n = px.size
    ext = np.zeros(8, dtype=np.int64)
    best = np.empty(8)
    for k in range(8):
        best[k] = -np.inf
    for i in range(n):
        x, y = px[i], py[i]
        # support directions in counter-clockwise order: 0, 45, ..., 315 degrees
        vals = (x, x + y, y, y - x, -x, -x - y, -y, x - y)
        for k in range(8):
            if vals[k] > best[k]:
                best[k] = vals[k]
                ext[k] = i
    poly = np.empty(8, dtype=np.int64)
    m = 0
    for k in range(8):
        if m == 0 or ext[k] != poly[m - 1]:
            poly[m] = ext[k]
            m += 1
    while m > 1 and poly[m - 1] == poly[0]:
        m -= 1
    keep = np.ones(n, dtype=np.bool_)
    if m < 3:
        return keep
    for i in range(n):
        inside = True
        for k in range(m):
            a = poly[k]
            b = poly[(k + 1) % m]
            if _cross(px[a], py[a], px[b], py[b], px[i], py[i]) <= 0.0:
                inside = False
                break
        if inside:
            keep[i] = False
    return keep


@njit(cache=True)
def _diameter(px, py):
    if px.size > 16:
        keep = _hull_candidates(px, py)
        px = px[keep]
        py = py[keep]
    # stable two-pass sort == lexicographic order by (x, y)
    by_y = np.argsort(py, kind="mergesort")
    order = by_y[np.argsort(px[by_y], kind="mergesort")]
    return _sorted_diameter(px[order], py[order])


def max_pairwise_distance(points: np.ndarray) -> float:
    """Exact diameter of a 2-D point set."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    return float(_diameter(np.ascontiguousarray(points[:, 0]),
                           np.ascontiguousarray(points[:, 1])))


@njit(cache=True)
def _cell_log_ratios(cells, n_cells, x0, y0, xt, yt):
    """ln(final / initial diameter) per cell, NaN where undefined."""
    counts = np.zeros(n_cells + 1, dtype=np.int64)
    for c in cells:
        counts[c + 1] += 1
    starts = np.cumsum(counts)
    fill = starts[:-1].copy()
    order = np.empty(cells.size, dtype=np.int64)
    for i in range(cells.size):
        c = cells[i]
        order[fill[c]] = i
        fill[c] += 1
    out = np.full(n_cells, np.nan)
    for c in range(n_cells):
        a, b = starts[c], starts[c + 1]
        if b - a < 2:
            continue
        idx = order[a:b]
        d0 = _diameter(x0[idx], y0[idx])
        if d0 == 0.0:
            continue
        dt = _diameter(xt[idx], yt[idx])
        if dt == 0.0:
            continue
        out[c] = np.log(dt / d0)
    return out


def _cell_rates(u, v, bx, by, n, horizon) -> np.ndarray:
    m = u.size - horizon
    cells = by[:m] * n + bx[:m]
    logs = _cell_log_ratios(cells, n * n, u[:m], v[:m], u[horizon:], v[horizon:])
    return logs[~np.isnan(logs)] / horizon


def expansion_rate(x, y, n: int, horizon: int = DEFAULT_HORIZON) -> float:
    """Mean over grid cells of (1/t) ln(final spread / initial spread).

    Spreads are maximal pairwise distances in the unit-rescaled plane, taken
    over the points that start in the same cell and again ``horizon`` steps
    later. Cells with fewer than 2 points or zero spread are skipped.
    """
    x, y = _check_pair(x, y)
    if horizon < 1 or x.size <= horizon:
        raise EstimationError(f"need 1 <= horizon < series length, got {horizon}")
    return _expansion_rate_binned(
        rescale_unit(x), rescale_unit(y), bin_indices(x, n), bin_indices(y, n), n, horizon
    )


def _expansion_rate_binned(u, v, bx, by, n, horizon) -> float:
    rates = _cell_rates(u, v, bx, by, n, horizon)
    if rates.size == 0:
        raise EstimationError("expansion undefined: no cell has two distinct points")
    return float(rates.mean())


def correlation_decay_time(e1: float, n: int) -> float:
    """Iterations for a one-cell uncertainty to cover the axis: ln(N) / e1."""
    if not e1 > 0:
        raise EstimationError(f"expansion rate must be positive, got {e1}")
    if n < 2:
        raise EstimationError(f"grid size must be >= 2, got {n}")
    return math.log(n) / e1


def pair_mir(x, y, n: int, horizon: int = DEFAULT_HORIZON) -> float:
    mi = mutual_information(build_joint_histogram(x, y, n))
    return mi / correlation_decay_time(expansion_rate(x, y, n, horizon), n)


# ---------------------------------------------------------- normalisation


def mir_hat_per_grid(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise EstimationError("normalisation needs at least 2 pairs")
    lo, hi = v.min(), v.max()
    if hi == lo:
        log.warning("all MIR values equal at this grid size; normalised values set to 0")
        return np.zeros_like(v)
    out = (v - lo) / (hi - lo)
    out[v == lo] = 0.0
    out[v == hi] = 1.0
    return out


def mir_bar(per_grid_hats) -> np.ndarray:
    """Sum normalised values over grid sizes (axis 1) and divide by the largest sum."""
    h = np.atleast_2d(np.asarray(per_grid_hats, dtype=np.float64))
    if h.shape[1] < 1:
        raise EstimationError("need at least one grid size")
    sums = h.sum(axis=1)
    top = sums.max()
    if not top > 0:
        log.warning("all aggregated MIR sums are zero; returning zeros")
        return np.zeros_like(sums)
    out = sums / top
    out[sums == top] = 1.0
    return out


# ---------------------------------------------------------------- results


def canonical_pairs(m: int) -> list[tuple[int, int]]:
    return list(combinations(range(m), 2))


@dataclass
class PairTable:
    """Per-pair, per-grid-size estimates; rows follow ``pairs``, columns ``grid_sizes``."""

    pairs: list[tuple[int, int]]
    grid_sizes: list[int]
    mi: np.ndarray
    e1: np.ndarray
    decay_time: np.ndarray
    mir: np.ndarray
    mir_hat: np.ndarray
    mir_bar: np.ndarray


@dataclass
class MirMatrix:
    labels: list[str]
    values: np.ndarray
    pairs: list[tuple[int, int]]
    reference: tuple[int, ...] = ()
    grid_sizes: list[int] = field(default_factory=list)
    n_max: int | None = None
    horizon: int = DEFAULT_HORIZON

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def reference_pair(self) -> int | None:
        if not self.reference:
            return None
        return self.pairs.index(tuple(sorted(self.reference)))

    def pair_values(self) -> np.ndarray:
        return np.array([self.values[i, j] for i, j in self.pairs])

    @classmethod
    def from_pair_values(cls, labels, values, reference=(), **kw) -> "MirMatrix":
        m = len(labels)
        pairs = canonical_pairs(m)
        mat = np.zeros((m, m))
        for (i, j), v in zip(pairs, values):
            mat[i, j] = mat[j, i] = v
        return cls(list(labels), mat, pairs, tuple(reference), **kw)


# --------------------------------------------------------------- pipeline


def dataset_max_grid_size(samples: np.ndarray, cap: int | None = None) -> int:
    """Common N_max: the smallest per-pair N_max, so every pair shares the grid range."""
    t, m = samples.shape
    limit = cap if cap is not None else min(t, 4096)
    alive = canonical_pairs(m)
    best = None
    n = 2
    while n <= limit and alive:
        bins = np.stack([bin_indices(c, n) for c in samples.T])
        for i, j in alive:
            n_oc = np.count_nonzero(np.bincount(bins[j] * n + bins[i], minlength=n * n))
            if not occupancy_ok(t, n_oc):
                alive = []
                break
        else:
            best = n
            n += 1
            continue
        break
    if best is None:
        raise EstimationError("insufficient data: occupancy condition fails at N=2")
    return best


def _grid_rows(args):
    """MI and expansion rate of every pair at one grid size."""
    samples, scaled, pairs, n, horizon = args
    bins = [bin_indices(c, n) for c in samples.T]
    mi = np.empty(len(pairs))
    e1 = np.empty(len(pairs))
    for p, (i, j) in enumerate(pairs):
        counts = np.bincount(bins[j] * n + bins[i], minlength=n * n).reshape(n, n)
        hist = JointHistogram(n, counts, samples.shape[0], (0.0, 1.0), (0.0, 1.0))
        mi[p] = mutual_information(hist)
        e1[p] = _expansion_rate_binned(scaled[i], scaled[j], bins[i], bins[j], n, horizon)
    return mi, e1


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def estimate_mir(
    data: SeriesMatrix,
    horizon: int = DEFAULT_HORIZON,
    grid_cap: int | None = None,
    workers: int | None = None,
) -> tuple[MirMatrix, PairTable]:
    samples = data.samples
    m = data.n_channels
    n_max = dataset_max_grid_size(samples, grid_cap)
    sizes = grid_sizes(n_max)
    pairs = canonical_pairs(m)
    scaled = [rescale_unit(c) for c in samples.T]
    jobs = [(samples, scaled, pairs, n, horizon) for n in sizes]
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(_grid_rows, jobs))
    else:
        cols = [_grid_rows(job) for job in jobs]

    # rows: pairs, columns: grid sizes
    mi = np.column_stack([c[0] for c in cols])
    e1 = np.column_stack([c[1] for c in cols])
    if np.any(e1 <= 0):
        p, g = np.argwhere(e1 <= 0)[0]
        i, j = pairs[p]
        raise EstimationError(
            f"non-positive expansion rate for pair {data.labels[i]}-{data.labels[j]} "
            f"at N={sizes[g]}"
        )
    decay = np.log(np.array(sizes, dtype=np.float64))[None, :] / e1
    mir = mi / decay
    hats = np.column_stack([mir_hat_per_grid(mir[:, g]) for g in range(len(sizes))])
    bar = mir_bar(hats)
    table = PairTable(pairs, sizes, mi, e1, decay, mir, hats, bar)
    matrix = MirMatrix.from_pair_values(
        data.labels, bar, data.reference, grid_sizes=sizes, n_max=n_max, horizon=horizon
    )
    return matrix, table


# ---------------------------------------------------------- serialisation


def _pair_key(labels, i, j) -> str:
    return f"{labels[i]}|{labels[j]}"


def mir_to_dict(matrix: MirMatrix, table: PairTable | None = None) -> dict:
    out = {
        "labels": list(matrix.labels),
        "grid_sizes": list(matrix.grid_sizes),
        "n_max": matrix.n_max,
        "horizon": matrix.horizon,
        "reference_columns": list(matrix.reference),
        "mir_bar": matrix.values.tolist(),
        "per_pair": {},
    }
    if table is not None:
        for p, (i, j) in enumerate(table.pairs):
            out["per_pair"][_pair_key(matrix.labels, i, j)] = {
                "mi": table.mi[p].tolist(),
                "e1": table.e1[p].tolist(),
                "decay_time": table.decay_time[p].tolist(),
                "mir": table.mir[p].tolist(),
                "mir_hat": table.mir_hat[p].tolist(),
                "mir_bar": float(table.mir_bar[p]),
            }
    return out


def mir_from_dict(d: dict) -> MirMatrix:
    labels = d["labels"]
    values = np.asarray(d["mir_bar"], dtype=np.float64)
    m = len(labels)
    if values.shape != (m, m):
        raise EstimationError(f"mir_bar must be {m}x{m}")
    return MirMatrix(
        labels,
        values,
        canonical_pairs(m),
        tuple(d.get("reference_columns", ())),
        grid_sizes=list(d.get("grid_sizes", [])),
        n_max=d.get("n_max"),
        horizon=d.get("horizon", DEFAULT_HORIZON),
    )


def dumps(obj) -> str:
    # repr-based float output round-trips exactly (17 significant digits max)
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"
