"""Fixed measurement graph, geodesic distances and kernel interpolation.

Node fields (one real value per vertex) are never parameterised directly.
They are the kernel convolution of a short coefficient vector carried by a
sparse set of control nodes, ``field = K @ beta`` with ``K[k, i]`` the
Gaussian weight of the geodesic distance between node ``k`` and control
node ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph


class NetworkError(ValueError):
    """Invalid graph, disconnected graph or inconsistent shapes."""


@dataclass(frozen=True)
class MeshNetwork:
    """Undirected weighted graph with ``num_nodes`` vertices.

    ``edges`` is an ``(E, 2)`` integer array with ``i < j`` on every row and
    ``lengths`` the matching positive edge lengths.
    """

    num_nodes: int
    edges: np.ndarray
    lengths: np.ndarray
    vertex_coords: np.ndarray | None = None
    _adjacency: sparse.csr_matrix = field(default=None, repr=False, compare=False)

    @property
    def adjacency(self) -> sparse.csr_matrix:
        if self._adjacency is None:
            n = self.num_nodes
            i, j = self.edges[:, 0], self.edges[:, 1]
            adj = sparse.coo_matrix(
                (np.concatenate([self.lengths, self.lengths]),
                 (np.concatenate([i, j]), np.concatenate([j, i]))),
                shape=(n, n),
            ).tocsr()
            object.__setattr__(self, "_adjacency", adj)
        return self._adjacency

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def components(self) -> np.ndarray:
        """Connected-component label per node."""
        _, labels = csgraph.connected_components(self.adjacency, directed=False)
        return labels

    def is_connected(self) -> bool:
        return self.num_nodes == 0 or len(np.unique(self.components())) == 1


def build_network(num_nodes, edges, lengths=None, vertex_coords=None, on_duplicate="min"):
    """Validate an edge list and return a :class:`MeshNetwork`.

    Parameters
    ----------
    num_nodes : int
        Number of vertices.
    edges : array-like
        Either ``(E, 3)`` rows ``(src, dst, length)`` or ``(E, 2)`` rows
        ``(src, dst)``; in the latter case ``lengths`` or ``vertex_coords``
        must be given.
    lengths : array-like, optional
        Edge lengths when ``edges`` has two columns.
    vertex_coords : array-like, optional
        ``(num_nodes, 3)`` coordinates. Missing lengths are derived as
        Euclidean distances between endpoints.
    on_duplicate : {"min", "error"}
        Duplicate edges (in either orientation) keep the shortest length, or
        raise when their lengths disagree.
    """
    num_nodes = int(num_nodes)
    if num_nodes < 1:
        raise NetworkError(f"num_nodes must be positive, got {num_nodes}")
    if on_duplicate not in ("min", "error"):
        raise ValueError(f"unknown on_duplicate policy {on_duplicate!r}")

    coords = None
    if vertex_coords is not None:
        coords = np.asarray(vertex_coords, dtype=float)
        if coords.shape != (num_nodes, 3):
            raise NetworkError(
                f"vertex_coords must have shape ({num_nodes}, 3), got {coords.shape}")

    raw = np.asarray(edges, dtype=float)
    if raw.size == 0:
        raw = raw.reshape(0, 3 if lengths is None and coords is None else 2)
    if raw.ndim != 2 or raw.shape[1] not in (2, 3):
        raise NetworkError(f"edges must be an (E, 2) or (E, 3) array, got shape {raw.shape}")

    ends = raw[:, :2]
    if not np.all(ends == np.round(ends)):
        raise NetworkError("edge endpoints must be integers")
    ends = ends.astype(np.int64)

    if raw.shape[1] == 3:
        lens = raw[:, 2].copy()
    elif lengths is not None:
        lens = np.asarray(lengths, dtype=float).ravel()
        if len(lens) != len(ends):
            raise NetworkError(f"{len(lens)} lengths given for {len(ends)} edges")
    elif coords is not None:
        lens = None
    else:
        raise NetworkError("edge lengths missing and no vertex coordinates to derive them")

    for row, (a, b) in enumerate(ends):
        if a < 0 or b < 0 or a >= num_nodes or b >= num_nodes:
            raise NetworkError(
                f"edge {row} ({a}, {b}): node index out of range for {num_nodes} nodes")
        if a == b:
            raise NetworkError(f"edge {row} ({a}, {b}): self-loop")

    if lens is None:
        lens = np.linalg.norm(coords[ends[:, 0]] - coords[ends[:, 1]], axis=1)
    for row, length in enumerate(lens):
        if not np.isfinite(length) or length <= 0:
            raise NetworkError(
                f"edge {row} ({ends[row, 0]}, {ends[row, 1]}): nonpositive length {length!r}")

    best: dict[tuple[int, int], float] = {}
    for (a, b), length in zip(ends, lens):
        key = (int(min(a, b)), int(max(a, b)))
        prev = best.get(key)
        if prev is None:
            best[key] = float(length)
        elif prev != length:
            if on_duplicate == "error":
                raise NetworkError(
                    f"duplicate edge {key} with contradictory lengths {prev} and {length}")
            best[key] = min(prev, float(length))

    keys = sorted(best)
    edge_arr = np.array(keys, dtype=np.int64).reshape(-1, 2)
    len_arr = np.array([best[k] for k in keys], dtype=float)
    edge_arr.setflags(write=False)
    len_arr.setflags(write=False)
    if coords is not None:
        coords.setflags(write=False)
    return MeshNetwork(num_nodes, edge_arr, len_arr, coords)


@dataclass(frozen=True)
class DistanceMatrix:
    """Geodesic distances from ``sources`` (rows) to every node (columns)."""

    sources: np.ndarray
    values: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape

    def row(self, node: int) -> np.ndarray:
        hits = np.flatnonzero(self.sources == node)
        if len(hits) == 0:
            raise KeyError(f"node {node} is not a source of this distance matrix")
        return self.values[hits[0]]


def geodesic_distances(net: MeshNetwork, sources=None) -> DistanceMatrix:
    """Shortest-path distances from each source to all nodes (Dijkstra).

    ``sources=None`` computes the full ``N_v x N_v`` matrix. Rows come back
    in the order of ``sources``.
    """
    if sources is None:
        src = np.arange(net.num_nodes)
    else:
        src = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if np.any((src < 0) | (src >= net.num_nodes)):
        raise NetworkError(f"source index out of range for {net.num_nodes} nodes")
    values = csgraph.dijkstra(net.adjacency, directed=False, indices=src)
    values = np.atleast_2d(values)
    if not np.all(np.isfinite(values)):
        labels = net.components()
        r, c = np.argwhere(~np.isfinite(values))[0]
        s = int(src[r])
        members = np.flatnonzero(labels == labels[c])
        shown = ", ".join(map(str, members[:10])) + (", ..." if len(members) > 10 else "")
        raise NetworkError(
            f"graph is disconnected: node {int(c)} is unreachable from source {s}; "
            f"it lies in component {int(labels[c])} of {len(np.unique(labels))} "
            f"(nodes {shown})")
    values.setflags(write=False)
    src.setflags(write=False)
    return DistanceMatrix(src, values)


@dataclass(frozen=True)
class ControlNodeSet:
    indices: np.ndarray
    bandwidth: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if len(np.unique(idx)) != len(idx):
            raise NetworkError("control node indices must be distinct")
        if not self.bandwidth > 0:
            raise NetworkError(f"bandwidth must be positive, got {self.bandwidth}")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    def __len__(self):
        return len(self.indices)


def default_bandwidth(dist: np.ndarray, indices) -> float:
    """Mean distance from each non-control node to its nearest control node.

    ``dist`` holds the rows of the control nodes (``N_c x N_v``). When every
    node is a control node the mean nearest-neighbour distance between
    controls is used instead.
    """
    indices = np.asarray(indices)
    nearest = np.min(dist, axis=0)
    mask = np.ones(dist.shape[1], dtype=bool)
    mask[indices] = False
    if mask.any():
        return float(np.mean(nearest[mask]))
    if len(indices) < 2:
        raise NetworkError("cannot derive a bandwidth from a single node; pass one explicitly")
    sub = np.array(dist[:, indices], dtype=float)
    np.fill_diagonal(sub, np.inf)
    return float(np.mean(sub.min(axis=1)))


def select_control_nodes(net: MeshNetwork, n_control: int, dist=None, seed=0,
                         first=None, bandwidth=None) -> ControlNodeSet:
    """Greedy farthest-point sampling of ``n_control`` nodes.

    The first node is drawn uniformly with ``seed`` unless ``first`` is
    given; every later pick maximises the geodesic distance to the already
    chosen set (ties broken by lowest index). ``dist`` may be a full
    distance matrix; otherwise one Dijkstra run per chosen node is made.
    """
    n = net.num_nodes
    n_control = int(n_control)
    if not 1 <= n_control <= n:
        raise NetworkError(f"n_control must lie in [1, {n}], got {n_control}")
    full = None if dist is None else np.asarray(dist, dtype=float)
    if full is not None and full.shape != (n, n):
        raise NetworkError(f"full distance matrix must be {n}x{n}, got {full.shape}")

    def row(node):
        if full is not None:
            return full[node]
        return geodesic_distances(net, [node]).values[0]

    if first is None:
        first = int(np.random.default_rng(seed).integers(n))
    chosen = [int(first)]
    rows = [row(chosen[0])]
    mindist = rows[0].copy()
    while len(chosen) < n_control:
        mindist[chosen] = -1.0
        nxt = int(np.argmax(mindist))
        chosen.append(nxt)
        rows.append(row(nxt))
        mindist = np.minimum(mindist, rows[-1])

    if bandwidth is None:
        bandwidth = default_bandwidth(np.vstack(rows), chosen)
    return ControlNodeSet(np.array(chosen, dtype=np.int64), bandwidth)


def kernel_weight(d, bandwidth):
    """Gaussian profile ``exp(-(d / bandwidth)**2 / 2)``; works elementwise."""
    u = np.asarray(d, dtype=float) / bandwidth
    out = np.exp(-0.5 * u * u)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class InterpolationOperator:
    """``N_v x N_c`` kernel matrix mapping control coefficients to node fields."""

    matrix: np.ndarray
    controls: ControlNodeSet

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_controls(self) -> int:
        return self.matrix.shape[1]

    def __call__(self, beta):
        return interpolate_field(self, beta)


def build_interpolator(dist, controls: ControlNodeSet) -> InterpolationOperator:
    """Kernel weights from the control rows of ``dist``.

    ``dist`` is the ``N_c x N_v`` matrix whose row ``i`` holds distances
    from ``controls.indices[i]``.
    """
    values = np.asarray(dist, dtype=float)
    if values.ndim != 2 or values.shape[0] != len(controls):
        raise NetworkError(
            f"distance matrix with {values.shape[0] if values.ndim == 2 else '?'} rows "
            f"does not match {len(controls)} control nodes")
    if isinstance(dist, DistanceMatrix) and not np.array_equal(dist.sources, controls.indices):
        raise NetworkError("distance matrix rows are not the control nodes, in order")
    mat = np.ascontiguousarray(kernel_weight(values, controls.bandwidth).T)
    mat.setflags(write=False)
    return InterpolationOperator(mat, controls)


def interpolate_field(op: InterpolationOperator, beta) -> np.ndarray:
    """Node field ``op.matrix @ beta``.

    ``beta`` may also be 2-D, one coefficient vector per row, in which case
    one field per row is returned.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape[-1] != op.num_controls:
        raise NetworkError(
            f"coefficient vector of length {beta.shape[-1]} for {op.num_controls} control nodes")
    if beta.ndim == 1:
        return op.matrix @ beta
    return beta @ op.matrix.T


def prepare_network(net: MeshNetwork, n_control: int, seed=0, bandwidth=None, first=None):
    """Select control nodes and build the interpolator without a full matrix."""
    controls = select_control_nodes(net, n_control, seed=seed, first=first, bandwidth=bandwidth)
    dist = geodesic_distances(net, controls.indices)
    return controls, build_interpolator(dist, controls)
