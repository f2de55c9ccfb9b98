"""Synthetic cohorts drawn from known parameters, plus benchmark meshes."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import cKDTree, distance_matrix

from . import rng
from .model import (
    IndividualParameters,
    LongitudinalDataset,
    PopulationParameters,
    forward_map,
    realize_fields,
    space_shift_fields,
)
from .network import InterpolationOperator, MeshNetwork, build_network

logger = logging.getLogger(__name__)

MAX_REJECTION_RATE = 0.2
_SUBJECT_STREAM = 7


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CohortSpec:
    """Shape of a synthetic cohort.

    ``visits`` is either a fixed count or an inclusive ``(low, high)``
    range drawn per subject. ``noise_std`` overrides the population noise
    level and may be zero.
    """

    n_subjects: int
    population: PopulationParameters
    visits: int | tuple = 5
    baseline_age: tuple = (65.0, 75.0)
    interval: float = 1.0
    seed: int = 0
    noise_std: float | None = None

    def __post_init__(self):
        if int(self.n_subjects) < 1:
            raise ValueError(f"n_subjects must be positive, got {self.n_subjects}")
        lo, hi = self.visit_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid visits {self.visits!r}")
        a, b = self.baseline_age
        if not (np.isfinite(a) and np.isfinite(b) and a <= b):
            raise ValueError(f"invalid baseline age bounds {self.baseline_age!r}")
        if not self.interval > 0:
            raise ValueError(f"interval must be positive, got {self.interval}")
        if self.noise_std is not None and not self.noise_std >= 0:
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")

    @property
    def visit_range(self):
        if np.ndim(self.visits) == 0:
            return int(self.visits), int(self.visits)
        lo, hi = self.visits
        return int(lo), int(hi)


@dataclass
class SimulatedCohort:
    data: LongitudinalDataset
    individuals: list
    rejected: int
    noiseless: list


def simulate_cohort(spec: CohortSpec, interp: InterpolationOperator) -> SimulatedCohort:
    pop = spec.population
    realize_fields(pop, interp)
    noise = pop.noise_std if spec.noise_std is None else spec.noise_std
    lo, hi = spec.visit_range
    nc = interp.num_controls
    subjects, truths, clean_maps = [], [], []
    rejected = drawn = 0
    for i in range(int(spec.n_subjects)):
        g = rng.stream(spec.seed, _SUBJECT_STREAM, i)
        indiv = IndividualParameters(
            xi=g.normal(0.0, pop.xi_std),
            tau=g.normal(0.0, pop.tau_std),
            w_coeffs=g.normal(0.0, pop.w_std, nc),
        )
        k = int(g.integers(lo, hi + 1))
        base = g.uniform(*spec.baseline_age)
        ages = base + spec.interval * np.arange(k)
        clean = forward_map(pop, indiv, interp, ages)
        values = np.empty_like(clean)
        for j in range(k):
            while True:
                drawn += 1
                y = clean[j] + noise * g.standard_normal(interp.num_nodes)
                if np.all(y > 0):
                    break
                rejected += 1
                if drawn >= 50 and rejected > MAX_REJECTION_RATE * drawn:
                    raise SimulationError(
                        f"{rejected} of {drawn} simulated visits had nonpositive values; "
                        "use a smaller noise_std")
            values[j] = y
        subjects.append((f"S{i:04d}", ages, values))
        truths.append(indiv)
        clean_maps.append(clean)
    if rejected:
        logger.info("redrew %d of %d simulated visits with nonpositive values", rejected, drawn)
    data = LongitudinalDataset(subjects, interp.num_nodes)
    return SimulatedCohort(data, truths, rejected, clean_maps)


def random_mesh(n_nodes: int, seed=0, k_neighbors=6) -> MeshNetwork:
    """Connected k-nearest-neighbour graph on random points of the unit sphere.

    Edge lengths are Euclidean; a minimum spanning tree is added so the
    graph is always connected.
    """
    g = np.random.default_rng(seed)
    pts = g.standard_normal((n_nodes, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    k = min(k_neighbors, n_nodes - 1)
    pairs = set()
    if k > 0:
        _, nbrs = cKDTree(pts).query(pts, k=k + 1)
        for a, row in enumerate(nbrs):
            for b in row[1:]:
                pairs.add((min(a, int(b)), max(a, int(b))))
        mst = minimum_spanning_tree(distance_matrix(pts, pts)).tocoo()
        for a, b in zip(mst.row, mst.col):
            pairs.add((min(int(a), int(b)), max(int(a), int(b))))
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return build_network(n_nodes, edges, vertex_coords=pts)


def population_from_fields(interp: InterpolationOperator, p_field, v_field, t0, noise_std,
                           xi_std, tau_std, w_std, ridge=1e-8) -> PopulationParameters:
    """Control coefficients whose interpolation best matches the given node fields."""
    K = interp.matrix
    A = K.T @ K + ridge * np.eye(K.shape[1])
    beta_p = np.linalg.solve(A, K.T @ np.asarray(p_field, dtype=float))
    beta_v = np.linalg.solve(A, K.T @ np.asarray(v_field, dtype=float))
    return PopulationParameters(t0, beta_p, beta_v, noise_std, xi_std, tau_std, w_std)


def _range_coefficients(K, lo, hi):
    """Coefficients whose field violates ``[lo, hi]`` by the least total amount."""
    n, nc = K.shape
    eye = np.eye(n)
    A = np.vstack([np.hstack([-K, -eye]), np.hstack([K, -eye])])
    b = np.concatenate([np.full(n, -lo), np.full(n, hi)])
    cost = np.concatenate([np.zeros(nc), np.ones(n)])
    res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * nc + [(0, None)] * n,
                  method="highs")
    if res.status != 0:
        raise SimulationError(f"range fit failed: {res.message}")
    return res.x[:nc]


def benchmark_population(net: MeshNetwork, interp: InterpolationOperator, t0=72.0,
                         p_range=(1.5, 3.6), v_range=(-0.12, -0.03), noise_std=0.1,
                         xi_std=0.3, tau_std=3.0, w_std=0.05, seed=0,
                         min_inside=0.9) -> PopulationParameters:
    """Ground truth for recovery benchmarks.

    The p coefficients minimise the total amount by which the p-field
    leaves ``p_range`` (a linear programme); at least ``min_inside`` of the
    nodes must end up inside and every node must be positive. A kernel
    basis with a short bandwidth usually cannot keep every node inside.
    The v coefficients are a smooth function of the control-node
    coordinates in ``v_range``, so the v-field is strictly negative.
    """
    if net.vertex_coords is None:
        raise ValueError("benchmark population needs vertex coordinates")
    g = np.random.default_rng(seed)
    ctrl = net.vertex_coords[interp.controls.indices]
    d = g.standard_normal(3)
    f = np.tanh(1.5 * ctrl @ (d / np.linalg.norm(d)))
    f = (f - f.min()) / (f.max() - f.min())
    beta_v = v_range[1] + (v_range[0] - v_range[1]) * f
    beta_p = _range_coefficients(interp.matrix, *p_range)
    pop = PopulationParameters(t0, beta_p, beta_v, noise_std, xi_std, tau_std, w_std)
    p, v = realize_fields(pop, interp)
    inside = np.mean((p >= p_range[0] - 1e-9) & (p <= p_range[1] + 1e-9))
    if inside < min_inside or v.max() >= 0:
        raise SimulationError(
            f"only {inside:.0%} of the benchmark p-field lies in {p_range}; "
            "use more control nodes or a larger bandwidth")
    return pop


def true_space_shifts(pop, individuals, interp):
    _, v = realize_fields(pop, interp)
    return np.array([space_shift_fields(ind.w_coeffs, interp, v) for ind in individuals])
