"""Synthetic datasets and CSV ingestion.

Every generator draws from ``numpy.random.Generator(PCG64(seed))`` so a spec
plus its seed fully determines the output matrix, bit for bit.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.PCG64"

CIRCLE_R = 0.35
CIRCLE_K = 6.9115
CMN_ALPHA = 0.03
TRIPLET_ALPHA = 0.1
DIRECTED_ALPHA = 0.1
LOGISTIC_R = 4.0
DEFAULT_TRANSIENT = 1000
DEFAULT_LENGTH = 100_000

# 16-node test topology for the circle-map network (0-based edges).
CMN_EDGES = (
    (0, 1), (0, 4), (1, 2), (1, 5), (2, 3), (3, 7), (4, 8), (5, 6),
    (5, 9), (6, 7), (6, 10), (8, 9), (8, 12), (9, 13), (10, 11),
    (10, 14), (11, 15), (12, 13), (13, 14), (14, 15),
)

TRIPLETS_ADJACENCY = np.array(
    [
        [0, 1, 0, 0, 0, 0],
        [1, 0, 1, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 0, 0, 1, 0],
        [0, 0, 0, 1, 0, 1],
        [0, 0, 0, 0, 1, 0],
    ],
    dtype=np.int8,
)

DIRECTED_ADJACENCY = np.array([[0, 1], [0, 0]], dtype=np.int8)

SIGMA_1 = np.array([[3.40, -2.75, -2.00], [-2.75, 5.50, 1.50], [-2.00, 1.50, 1.25]])
SIGMA_2 = np.array([[1.0, 0.5, 0.3], [0.5, 0.5, 0.3], [0.3, 0.3, 0.3]])
# Not positive semi-definite as given (smallest eigenvalue ~ -1.12).
SIGMA_3 = np.array([[1.40, -2.75, -2.00], [-2.75, 5.50, -1.00], [-2.00, -1.00, 3.25]])


class DataError(ValueError):
    """Raised for invalid input data or generator specs."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def cmn_adjacency() -> np.ndarray:
    adj = np.zeros((16, 16), dtype=np.int8)
    for i, j in CMN_EDGES:
        adj[i, j] = adj[j, i] = 1
    return adj


@dataclass
class SeriesMatrix:
    """T x M samples with channel labels.

    ``reference`` holds the column indices of an attached reference pair, if
    any; inference reads it from here rather than from label names.
    """

    samples: np.ndarray
    labels: list[str]
    meta: dict[str, Any] = field(default_factory=dict)
    reference: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise DataError("samples must be a 2-D matrix")
        t, m = self.samples.shape
        if t < 2:
            raise DataError(f"need at least 2 rows, got {t}")
        if m < 2:
            raise DataError(f"fewer than 2 channels (got {m})")
        if len(self.labels) != m:
            raise DataError(f"{len(self.labels)} labels for {m} channels")
        if len(set(self.labels)) != m:
            raise DataError("channel labels must be unique")
        if not np.all(np.isfinite(self.samples)):
            bad = np.argwhere(~np.isfinite(self.samples))[0]
            raise DataError(f"non-finite value at row {bad[0]}, column {bad[1]}")
        self.labels = [str(s) for s in self.labels]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    def column(self, i: int) -> np.ndarray:
        return self.samples[:, i]


def default_labels(m: int) -> list[str]:
    return [f"c{i + 1}" for i in range(m)]


# ---------------------------------------------------------------- CSV input


def load_csv(path: str | Path, has_header: bool = True) -> SeriesMatrix:
    """Read a comma-separated numeric file.

    Row and column numbers in error messages are 1-based and count the
    header line, so they match what an editor shows.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} is empty")

    header = None
    if has_header:
        header = [c.strip() for c in rows[0]]
        body = rows[1:]
        offset = 2
    else:
        body = rows
        offset = 1

    width = len(header) if header is not None else len(body[0]) if body else 0
    if width < 2:
        raise DataError(f"fewer than 2 channels in {path}")
    try:
        values = np.array(body, dtype=np.float64)
        if values.ndim != 2 or not np.all(np.isfinite(values)):
            raise ValueError
    except ValueError:
        _locate_bad_cell(body, width, offset)
        raise
    if len(body) < 2:
        raise DataError(f"fewer than 2 rows in {path}")
    labels = header if header is not None else default_labels(width)
    return SeriesMatrix(values, labels, meta={"source": "csv", "path": str(path)})


def _locate_bad_cell(body, width, offset) -> None:
    for r, row in enumerate(body):
        if len(row) != width:
            raise DataError(
                f"ragged row {r + offset}: expected {width} columns, got {len(row)}"
            )
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"non-numeric value {cell!r} at row {r + offset}, column {c + 1}"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"non-finite value at row {r + offset}, column {c + 1}")


def write_csv(data: SeriesMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(data.labels)
        for row in data.samples:
            writer.writerow([repr(float(v)) for v in row])


def log_returns(prices: SeriesMatrix) -> SeriesMatrix:
    p = prices.samples
    if p.shape[0] < 2:
        raise DataError("log returns need at least 2 rows")
    bad = np.argwhere(p <= 0)
    if bad.size:
        r, c = bad[0]
        raise DataError(f"non-positive price {p[r, c]} at row {r}, column {c}")
    out = np.log(p[1:] / p[:-1])
    meta = dict(prices.meta, transform="log_returns")
    return SeriesMatrix(out, list(prices.labels), meta=meta, reference=prices.reference)


# ------------------------------------------------------------ map networks


@dataclass
class CouplingSpec:
    adjacency: np.ndarray
    alpha: float
    map_kind: str = "circle"
    r: float = CIRCLE_R
    K: float = CIRCLE_K
    transient: int = DEFAULT_TRANSIENT
    length: int = DEFAULT_LENGTH
    seed: int = 0

    def __post_init__(self) -> None:
        self.adjacency = np.asarray(self.adjacency, dtype=np.int8)
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DataError("adjacency must be square")
        if not np.isin(a, (0, 1)).all():
            raise DataError("adjacency must be binary")
        if np.any(np.diag(a)):
            raise DataError("adjacency diagonal must be zero")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.map_kind not in ("circle", "logistic"):
            raise DataError(f"unknown map kind {self.map_kind!r}")
        if self.length < 2:
            raise DataError("length must be at least 2")
        if self.transient < 0:
            raise DataError("transient must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        d = {
            "adjacency": self.adjacency.tolist(),
            "alpha": self.alpha,
            "map_kind": self.map_kind,
            "r": self.r,
            "transient": self.transient,
            "length": self.length,
            "seed": self.seed,
        }
        if self.map_kind == "circle":
            d["K"] = self.K
        return d


def _local_map(kind: str, r: float, K: float):
    if kind == "circle":
        c = K / (2.0 * math.pi)
        two_pi = 2.0 * math.pi

        def f(x):
            return np.mod(x + r - c * np.sin(two_pi * x), 1.0)
    else:

        def f(x):
            return r * x * (1.0 - x)

    return f


def coupling_matrix(adjacency: np.ndarray, alpha: float) -> np.ndarray:
    """Row-stochastic matrix W with x_{n+1} = W f(x_n).

    Nodes with no inputs keep their pure local map.
    """
    a = adjacency.astype(np.float64)
    k = a.sum(axis=1)
    w = np.eye(a.shape[0])
    driven = k > 0
    w[driven] *= 1.0 - alpha
    w[driven] += alpha * a[driven] / k[driven, None]
    return w


def gen_coupled_map_network(spec: CouplingSpec, warn_isolated: bool = True) -> SeriesMatrix:
    m = spec.adjacency.shape[0]
    k = spec.adjacency.sum(axis=1)
    warnings = []
    if spec.alpha > 0 and warn_isolated:
        for i in np.flatnonzero(k == 0):
            warnings.append(f"node {i + 1} has no inputs; coupling term omitted")
            log.warning(warnings[-1])
    f = _local_map(spec.map_kind, spec.r, spec.K)
    w = coupling_matrix(spec.adjacency, spec.alpha)
    rng = make_rng(spec.seed)
    x = rng.random(m)
    out = np.empty((spec.length, m))
    for _ in range(spec.transient):
        x = w @ f(x)
    for n in range(spec.length):
        x = w @ f(x)
        out[n] = x
    if spec.map_kind == "circle":
        # a convex combination of values in [0,1) can round up to 1.0
        out[out >= 1.0] -= 1.0
        ok = (out >= 0.0) & (out < 1.0)
    else:
        ok = (out >= 0.0) & (out <= 1.0)
    if not ok.all():
        n, i = np.argwhere(~ok)[0]
        raise DataError(f"divergent value {out[n, i]} at step {n}, node {i + 1}")
    meta = {
        "source": "synthetic",
        "kind": f"{spec.map_kind}_map_network",
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "rng": RNG_ALGORITHM,
        "adjacency": spec.adjacency.tolist(),
    }
    if warnings:
        meta["warnings"] = warnings
    return SeriesMatrix(out, [f"x{i + 1}" for i in range(m)], meta=meta)


def gen_directed_logistic_pair(
    alpha: float = DIRECTED_ALPHA,
    length: int = DEFAULT_LENGTH,
    seed: int = 0,
    transient: int = DEFAULT_TRANSIENT,
) -> SeriesMatrix:
    spec = CouplingSpec(
        DIRECTED_ADJACENCY, alpha, "logistic", r=LOGISTIC_R,
        transient=transient, length=length, seed=seed,
    )
    # the driving node is autonomous by design
    data = gen_coupled_map_network(spec, warn_isolated=False)
    data.meta["kind"] = "directed_pair"
    return data


# --------------------------------------------------------------- Gaussians


def nearest_psd(cov: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero (Frobenius-nearest PSD matrix)."""
    cov = np.asarray(cov, dtype=np.float64)
    w, u = np.linalg.eigh((cov + cov.T) / 2.0)
    return (u * np.clip(w, 0.0, None)) @ u.T


@dataclass
class GaussianBlockSpec:
    blocks: list[np.ndarray]
    length: int = DEFAULT_LENGTH
    seed: int = 0

    def __post_init__(self) -> None:
        self.blocks = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in self.blocks]
        if not self.blocks:
            raise DataError("at least one covariance block is required")
        if self.length < 2:
            raise DataError("length must be at least 2")
        for i, b in enumerate(self.blocks):
            if b.shape[0] != b.shape[1]:
                raise DataError(f"block {i + 1} is not square")
            if not np.allclose(b, b.T, atol=1e-12):
                raise DataError(f"block {i + 1} is not symmetric")


def _block_factor(cov: np.ndarray, index: int) -> np.ndarray:
    w, u = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -1e-10 * scale:
        raise DataError(
            f"block {index + 1} is not positive semi-definite "
            f"(smallest eigenvalue {w.min():.6g})"
        )
    return u * np.sqrt(np.clip(w, 0.0, None))


def sample_gaussian_blocks(spec: GaussianBlockSpec) -> np.ndarray:
    """Draw ``length`` rows; each block is an independent correlated group."""
    factors = [_block_factor(b, i) for i, b in enumerate(spec.blocks)]
    rng = make_rng(spec.seed)
    d = sum(f.shape[0] for f in factors)
    z = rng.standard_normal((spec.length, d))
    out = np.empty_like(z)
    col = 0
    for f in factors:
        k = f.shape[0]
        out[:, col:col + k] = z[:, col:col + k] @ f.T
        col += k
    return out


def gen_correlated_gaussians(spec: GaussianBlockSpec) -> SeriesMatrix:
    out = sample_gaussian_blocks(spec)
    meta = {
        "source": "synthetic",
        "kind": "gaussians",
        "spec": {
            "blocks": [b.tolist() for b in spec.blocks],
            "length": spec.length,
            "seed": spec.seed,
        },
        "seed": spec.seed,
        "rng": RNG_ALGORITHM,
        "groups": _block_groups(spec.blocks),
    }
    return SeriesMatrix(out, [f"x{i + 1}" for i in range(out.shape[1])], meta=meta)


def _block_groups(blocks: list[np.ndarray]) -> list[list[int]]:
    groups, col = [], 0
    for b in blocks:
        groups.append(list(range(col, col + b.shape[0])))
        col += b.shape[0]
    return groups


def gen_uniform_pair(length: int = DEFAULT_LENGTH, seed: int = 0) -> SeriesMatrix:
    if length < 2:
        raise DataError("length must be at least 2")
    out = make_rng(seed).random((length, 2))
    meta = {"source": "synthetic", "kind": "uniform_pair", "seed": seed,
            "rng": RNG_ALGORITHM, "spec": {"length": length, "seed": seed}}
    return SeriesMatrix(out, ["u1", "u2"], meta=meta)


# --------------------------------------------------------- reference pairs


def attach_reference_pair(data: SeriesMatrix, ref: SeriesMatrix) -> SeriesMatrix:
    if data.reference:
        raise DataError("reference pair already present")
    if ref.n_channels != 2:
        raise DataError("reference must have exactly 2 channels")
    t = min(data.n_samples, ref.n_samples)
    if data.n_samples != ref.n_samples:
        log.warning(
            "row counts differ (%d vs %d); truncating both to %d",
            data.n_samples, ref.n_samples, t,
        )
    labels = list(data.labels) + ["_ref1", "_ref2"]
    if len(set(labels)) != len(labels):
        raise DataError("data labels collide with reference labels")
    samples = np.hstack([data.samples[:t], ref.samples[:t]])
    m = data.n_channels
    meta = dict(data.meta)
    meta["reference_pair"] = {"columns": [m, m + 1], "source": ref.meta}
    if t != data.n_samples or t != ref.n_samples:
        meta["truncated_to"] = t
    return SeriesMatrix(samples, labels, meta=meta, reference=(m, m + 1))


# ----------------------------------------------------------------- presets


def preset_spec(name: str, seed: int) -> CouplingSpec | GaussianBlockSpec:
    if name == "paper-cmn":
        return CouplingSpec(cmn_adjacency(), CMN_ALPHA, "circle", r=CIRCLE_R, K=CIRCLE_K,
                            seed=seed)
    if name == "paper-isolated":
        return CouplingSpec(np.zeros((6, 6), dtype=np.int8), 0.0, "logistic",
                            r=LOGISTIC_R, seed=seed)
    if name == "paper-triplets":
        return CouplingSpec(TRIPLETS_ADJACENCY, TRIPLET_ALPHA, "logistic",
                            r=LOGISTIC_R, seed=seed)
    if name == "paper-gaussians":
        return GaussianBlockSpec([SIGMA_1, SIGMA_2, nearest_psd(SIGMA_3)], seed=seed)
    raise KeyError(name)


PRESETS = ("paper-cmn", "paper-isolated", "paper-triplets", "paper-gaussians")


def generate_preset(name: str, seed: int) -> SeriesMatrix:
    spec = preset_spec(name, seed)
    if isinstance(spec, GaussianBlockSpec):
        data = gen_correlated_gaussians(spec)
    else:
        data = gen_coupled_map_network(spec)
    data.meta["preset"] = name
    return data
