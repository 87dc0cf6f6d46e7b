"""Threshold selection and adjacency reconstruction from a MirMatrix."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimator import MirMatrix

DEFAULT_GAP = 0.1


class InferenceError(ValueError):
    pass


class NoAbruptChange(InferenceError):
    pass


@dataclass
class ThresholdDecision:
    tau: float
    method: str  # "jump" or "reference"
    jump_gap: float = DEFAULT_GAP
    evidence: list[dict] = field(default_factory=list)

    def connected(self, value: float) -> bool:
        # the reference pair itself has to come out unconnected
        if self.method == "reference":
            return value > self.tau
        return value >= self.tau

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "method": self.method,
            "jump_gap": self.jump_gap,
            "evidence": self.evidence,
        }


@dataclass
class InferredNetwork:
    labels: list[str]
    adjacency: np.ndarray
    threshold: ThresholdDecision
    mir: MirMatrix
    excluded_channels: list[int] = field(default_factory=list)

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def n_edges(self) -> int:
        return len(self.edges())

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "adjacency": self.adjacency.astype(int).tolist(),
            "edges": [[self.labels[i], self.labels[j]] for i, j in self.edges()],
            "tau": self.threshold.tau,
            "method": self.threshold.method,
            "jump_gap": self.threshold.jump_gap,
            "evidence": self.threshold.evidence,
            "excluded_channels": [self.mir.labels[c] for c in self.excluded_channels],
        }

    def edge_list_text(self) -> str:
        return "".join(f"{self.labels[i]},{self.labels[j]}\n" for i, j in self.edges())


def order_pairs(mir: MirMatrix) -> list[tuple[tuple[int, int], float]]:
    """Pairs sorted ascending by value; ties keep canonical pair order."""
    values = mir.pair_values()
    order = np.argsort(values, kind="stable")
    return [(mir.pairs[k], float(values[k])) for k in order]


def jump_threshold(ordered, gap: float = DEFAULT_GAP) -> ThresholdDecision:
    """Split at the first ascending step larger than ``gap``; tau is the midpoint."""
    if len(ordered) < 2:
        raise InferenceError("jump threshold needs at least 2 pairs")
    values = [v for _, v in ordered]
    for k in range(len(values) - 1):
        if values[k + 1] - values[k] > gap:
            lo, hi = ordered[k], ordered[k + 1]
            return ThresholdDecision(
                tau=(values[k] + values[k + 1]) / 2.0,
                method="jump",
                jump_gap=gap,
                evidence=[
                    {"pair": list(lo[0]), "value": lo[1]},
                    {"pair": list(hi[0]), "value": hi[1]},
                ],
            )
    raise NoAbruptChange(
        f"no abrupt change larger than {gap} in the ordered values; "
        "use the reference method"
    )


def reference_threshold(mir: MirMatrix, reference_pair: int | None = None) -> ThresholdDecision:
    if reference_pair is None:
        reference_pair = mir.reference_pair
    if reference_pair is None:
        raise InferenceError("no reference pair in the MIR matrix")
    i, j = mir.pairs[reference_pair]
    value = float(mir.values[i, j])
    return ThresholdDecision(
        tau=value,
        method="reference",
        evidence=[{"pair": [i, j], "value": value}],
    )


def reconstruct_adjacency(mir: MirMatrix, tau: ThresholdDecision) -> InferredNetwork:
    excluded = sorted(mir.reference)
    keep = [c for c in range(mir.size) if c not in excluded]
    sub = mir.values[np.ix_(keep, keep)]
    connected = np.vectorize(tau.connected, otypes=[bool])(sub)
    np.fill_diagonal(connected, False)
    adjacency = connected.astype(np.int8)
    return InferredNetwork(
        labels=[mir.labels[c] for c in keep],
        adjacency=adjacency,
        threshold=tau,
        mir=mir,
        excluded_channels=excluded,
    )


@dataclass
class Accuracy:
    percent: float
    missed: list[tuple[int, int]]
    spurious: list[tuple[int, int]]
    n_pairs: int

    @property
    def perfect(self) -> bool:
        return not self.missed and not self.spurious


def _check_binary_symmetric(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InferenceError(f"{name} adjacency must be square")
    if not np.isin(a, (0, 1)).all():
        raise InferenceError(f"{name} adjacency must be binary")
    if not np.array_equal(a, a.T):
        raise InferenceError(f"{name} adjacency must be symmetric")
    return a.astype(np.int8)


def inference_accuracy(truth, inferred) -> Accuracy:
    t = _check_binary_symmetric(truth, "truth")
    g = _check_binary_symmetric(inferred, "inferred")
    if t.shape != g.shape:
        raise InferenceError(f"size mismatch: truth {t.shape[0]} vs inferred {g.shape[0]}")
    m = t.shape[0]
    iu = np.triu_indices(m, 1)
    correct = int(np.sum(t[iu] == g[iu]))
    n_pairs = m * (m - 1) // 2
    missed = [(i, j) for i, j in zip(*iu) if t[i, j] and not g[i, j]]
    spurious = [(i, j) for i, j in zip(*iu) if g[i, j] and not t[i, j]]
    return Accuracy(
        percent=100.0 * correct / n_pairs if n_pairs else 100.0,
        missed=[(int(i), int(j)) for i, j in missed],
        spurious=[(int(i), int(j)) for i, j in spurious],
        n_pairs=n_pairs,
    )
