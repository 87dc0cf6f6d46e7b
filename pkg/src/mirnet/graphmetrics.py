"""Structural metrics for binary undirected networks."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import networkx as nx
import numpy as np

DEFAULT_ENSEMBLE = 20
SWAPS_PER_EDGE = 10


class GraphError(ValueError):
    pass


def _as_adjacency(adjacency) -> np.ndarray:
    a = np.asarray(adjacency)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError("adjacency must be square")
    if not np.isin(a, (0, 1)).all():
        raise GraphError("adjacency must be binary")
    if not np.array_equal(a, a.T):
        raise GraphError("adjacency must be symmetric")
    if np.any(np.diag(a)):
        raise GraphError("adjacency diagonal must be zero")
    return a.astype(np.int8)


def to_graph(adjacency) -> nx.Graph:
    a = _as_adjacency(adjacency)
    g = nx.Graph()
    g.add_nodes_from(range(a.shape[0]))
    g.add_edges_from(zip(*np.nonzero(np.triu(a, 1))))
    return g


def to_adjacency(g: nx.Graph, n: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.int8)
    for u, v in g.edges():
        a[u, v] = a[v, u] = 1
    return a


@dataclass
class BasicStats:
    degrees: list[int]
    n_edges: int
    components: list[list[int]]


def basic_stats(adjacency) -> BasicStats:
    a = _as_adjacency(adjacency)
    g = to_graph(a)
    comps = sorted((sorted(int(v) for v in c) for c in nx.connected_components(g)), key=lambda c: c[0])
    return BasicStats(
        degrees=a.sum(axis=1).astype(int).tolist(),
        n_edges=int(a.sum()) // 2,
        components=comps,
    )


def _largest_component(g: nx.Graph) -> nx.Graph:
    # ties go to the component holding the lowest node index
    best = max(nx.connected_components(g), key=lambda c: (len(c), -min(c)))
    return g.subgraph(best)


def _clustering_and_path(g: nx.Graph) -> tuple[float, float]:
    c = nx.average_clustering(g)
    core = _largest_component(g)
    path = nx.average_shortest_path_length(core) if core.number_of_nodes() > 1 else 0.0
    return float(c), float(path)


def clustering_and_path(adjacency) -> tuple[float, float]:
    """Mean local clustering (degree < 2 counts as 0) and mean shortest path
    length within the largest connected component."""
    g = to_graph(adjacency)
    if g.number_of_nodes() < 3:
        raise GraphError("clustering and path length need at least 3 nodes")
    return _clustering_and_path(g)


def rewire(adjacency, seed: int, swaps_per_edge: int = SWAPS_PER_EDGE) -> np.ndarray:
    """Degree-preserving randomisation by repeated double-edge swaps.

    Graphs that admit no valid swap (complete graphs, stars) come back as they are.
    """
    a = _as_adjacency(adjacency)
    g = to_graph(a)
    m = g.number_of_edges()
    if m < 2 or g.number_of_nodes() < 4:
        return a.copy()
    nswap = swaps_per_edge * m
    try:
        nx.double_edge_swap(g, nswap=nswap, max_tries=100 * nswap, seed=seed)
    except nx.NetworkXAlgorithmError:
        pass
    return to_adjacency(g, a.shape[0])


@dataclass
class SigmaResult:
    sigma: float | None
    clustering: float
    path_length: float
    clustering_rand: float | None = None
    path_length_rand: float | None = None
    ensemble_size: int = 0
    seed: int = 0
    reason: str | None = None


def small_world_sigma(adjacency, ensemble_size: int = DEFAULT_ENSEMBLE, seed: int = 0) -> SigmaResult:
    """sigma = (C / C_rand) / (L / L_rand) over degree-preserving rewirings.

    Each ensemble member gets its own seed spawned from ``seed``.
    """
    a = _as_adjacency(adjacency)
    g = to_graph(a)
    c, path = _clustering_and_path(g) if g.number_of_nodes() >= 3 else (0.0, 0.0)
    result = SigmaResult(None, c, path, ensemble_size=ensemble_size, seed=seed)
    core = _largest_component(g)
    if core.number_of_nodes() < 4 or core.number_of_edges() < 3:
        result.reason = "largest component needs at least 4 nodes and 3 edges"
        return result
    seeds = np.random.SeedSequence(seed).generate_state(ensemble_size, dtype=np.uint32)
    cs, ls = [], []
    for s in seeds:
        r = rewire(a, int(s))
        cr, lr = _clustering_and_path(to_graph(r))
        cs.append(cr)
        ls.append(lr)
    result.clustering_rand = float(np.mean(cs))
    result.path_length_rand = float(np.mean(ls))
    if result.clustering_rand == 0.0:
        result.reason = "randomised graphs have zero clustering"
        return result
    if path == 0.0:
        result.reason = "zero path length"
        return result
    result.sigma = (c / result.clustering_rand) / (path / result.path_length_rand)
    return result


def assortativity(adjacency) -> tuple[float | None, str | None]:
    """Pearson correlation of degrees across edge ends, each edge taken both ways.

    Returns ``(None, reason)`` when undefined.
    """
    a = _as_adjacency(adjacency)
    deg = a.sum(axis=1).astype(np.float64)
    i, j = np.nonzero(a)
    if i.size == 0:
        return None, "graph has no edges"
    x, y = deg[i], deg[j]
    if np.all(x == x[0]):
        return None, "all edge endpoints have equal degree"
    x = x - x.mean()
    y = y - y.mean()
    return float(np.sum(x * y) / np.sqrt(np.sum(x * x) * np.sum(y * y))), None


def modularity(adjacency, communities) -> float:
    a = _as_adjacency(adjacency).astype(np.float64)
    two_m = a.sum()
    if two_m == 0:
        raise GraphError("modularity is undefined without edges")
    k = a.sum(axis=1)
    labels = np.asarray(communities)
    same = labels[:, None] == labels[None, :]
    return float(np.sum((a - np.outer(k, k) / two_m)[same]) / two_m)


def greedy_modularity(adjacency) -> tuple[float, list[int]]:
    """Agglomerative modularity maximisation.

    Start from singletons and merge the pair of communities with the largest
    gain until no merge increases Q. Ties go to the pair whose smallest member
    indices are lowest. Communities are numbered by their lowest node.
    """
    a = _as_adjacency(adjacency).astype(np.float64)
    n = a.shape[0]
    two_m = a.sum()
    if two_m == 0:
        raise GraphError("modularity is undefined without edges")
    # e[p, q]: fraction of edge ends joining community p to q
    e = a / two_m
    groups = [[v] for v in range(n)]
    while len(groups) > 1:
        share = e.sum(axis=1)
        gain = 2.0 * (e - np.outer(share, share))
        np.fill_diagonal(gain, -np.inf)
        best = gain.max()
        if not best > 1e-15:
            break
        p, q = np.argwhere(gain == best)[0]  # row-major: lowest p, then lowest q
        p, q = min(p, q), max(p, q)
        groups[p] = sorted(groups[p] + groups[q])
        del groups[q]
        e[p] += e[q]
        e[:, p] += e[:, q]
        e = np.delete(np.delete(e, q, axis=0), q, axis=1)
    groups.sort(key=lambda g: g[0])
    labels = [0] * n
    for c, members in enumerate(groups):
        for v in members:
            labels[v] = c
    return modularity(a.astype(np.int8), labels), labels


@dataclass
class MetricsReport:
    n_nodes: int
    n_edges: int
    degree_sequence: list[int]
    n_components: int
    clustering: float | None
    avg_path_length: float | None
    largest_component_size: int
    sigma: float | None
    assortativity: float | None
    modularity: float | None
    communities: dict[str, int]
    ensemble: dict
    undefined: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_report(
    adjacency, labels=None, ensemble_size: int = DEFAULT_ENSEMBLE, seed: int = 0
) -> MetricsReport:
    a = _as_adjacency(adjacency)
    n = a.shape[0]
    labels = list(labels) if labels is not None else [str(i + 1) for i in range(n)]
    stats = basic_stats(a)
    undefined = {}

    clustering = path = None
    if n >= 3:
        clustering, path = clustering_and_path(a)
    else:
        undefined["clustering"] = "fewer than 3 nodes"

    sw = small_world_sigma(a, ensemble_size, seed)
    if sw.sigma is None:
        undefined["sigma"] = sw.reason

    r, why = assortativity(a)
    if r is None:
        undefined["assortativity"] = why

    q, communities = None, {}
    if stats.n_edges:
        q, parts = greedy_modularity(a)
        communities = {labels[v]: c for v, c in enumerate(parts)}
    else:
        undefined["modularity"] = "graph has no edges"

    return MetricsReport(
        n_nodes=n,
        n_edges=stats.n_edges,
        degree_sequence=stats.degrees,
        n_components=len(stats.components),
        clustering=clustering,
        avg_path_length=path,
        largest_component_size=max(len(c) for c in stats.components),
        sigma=sw.sigma,
        assortativity=r,
        modularity=q,
        communities=communities,
        ensemble={
            "method": "double-edge swap",
            "size": ensemble_size,
            "seed": seed,
            "swaps_per_edge": SWAPS_PER_EDGE,
            "clustering_rand": sw.clustering_rand,
            "path_length_rand": sw.path_length_rand,
        },
        undefined=undefined,
    )
