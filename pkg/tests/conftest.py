import numpy as np
import pytest

from netprog.network import build_network, prepare_network
from netprog.simulate import benchmark_population, random_mesh


def floyd_warshall(num_nodes, edges):
    """Dense all-pairs shortest paths; the reference for Dijkstra."""
    d = np.full((num_nodes, num_nodes), np.inf)
    np.fill_diagonal(d, 0.0)
    for a, b, length in edges:
        a, b = int(a), int(b)
        d[a, b] = d[b, a] = min(d[a, b], length)
    for k in range(num_nodes):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    return d


def random_connected_edges(num_nodes, gen, extra=None):
    """Random spanning tree plus extra edges; lengths are multiples of 1/8."""
    order = gen.permutation(num_nodes)
    edges = []
    for i in range(1, num_nodes):
        a = int(order[i])
        b = int(order[gen.integers(i)])
        edges.append((a, b, gen.integers(1, 80) / 8))
    extra = num_nodes if extra is None else extra
    for _ in range(extra):
        a, b = gen.choice(num_nodes, 2, replace=False)
        edges.append((int(a), int(b), gen.integers(1, 80) / 8))
    return edges


@pytest.fixture
def path3():
    return build_network(3, [(0, 1, 1.0), (1, 2, 1.0)])


@pytest.fixture
def path5():
    return build_network(5, [(i, i + 1, 1.0) for i in range(4)])


@pytest.fixture(scope="session")
def small_problem():
    """40-node sphere mesh with 6 controls and a benchmark-style truth."""
    net = random_mesh(40, seed=3)
    controls, interp = prepare_network(net, 6, seed=0)
    pop = benchmark_population(net, interp, seed=1, min_inside=0.0)
    return net, interp, pop


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
