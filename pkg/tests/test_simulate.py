import numpy as np
import pytest

from netprog.model import forward_map
from netprog.simulate import CohortSpec, SimulationError, random_mesh, simulate_cohort


def test_zero_noise_is_exact(small_problem):
    _, interp, pop = small_problem
    cohort = simulate_cohort(CohortSpec(5, pop, visits=(2, 5), seed=1, noise_std=0.0), interp)
    assert cohort.rejected == 0
    for s, ind in zip(cohort.data, cohort.individuals):
        np.testing.assert_array_equal(s.values, forward_map(pop, ind, interp, s.ages))


def test_empirical_noise_level(small_problem):
    _, interp, pop = small_problem
    n_subjects = 100_000 // (5 * interp.num_nodes) + 1
    cohort = simulate_cohort(CohortSpec(n_subjects, pop, visits=5, seed=2), interp)
    resid = np.concatenate([s.values - c for s, c in zip(cohort.data, cohort.noiseless)]).ravel()
    assert resid.size >= 100_000
    assert np.std(resid) == pytest.approx(pop.noise_std, rel=0.02)


def test_same_seed_same_cohort(small_problem):
    _, interp, pop = small_problem
    spec = CohortSpec(6, pop, visits=(1, 6), seed=3)
    a, b = simulate_cohort(spec, interp), simulate_cohort(spec, interp)
    assert a.data.ids == b.data.ids
    for s, t in zip(a.data, b.data):
        assert s.ages.tobytes() == t.ages.tobytes()
        assert s.values.tobytes() == t.values.tobytes()


def test_values_positive_and_ages_increasing(small_problem):
    _, interp, pop = small_problem
    cohort = simulate_cohort(CohortSpec(30, pop.replace(noise_std=0.3), visits=(2, 6), seed=4),
                             interp)
    assert cohort.rejected > 0
    for s in cohort.data:
        assert np.all(s.values > 0)
        assert np.all(np.diff(s.ages) > 0)
        assert 2 <= s.num_visits <= 6


def test_random_effect_moments(small_problem):
    _, interp, pop = small_problem
    n = 600
    cohort = simulate_cohort(CohortSpec(n, pop, visits=1, seed=5), interp)
    xi = np.array([i.xi for i in cohort.individuals])
    tau = np.array([i.tau for i in cohort.individuals])
    for x, sd in ((xi, pop.xi_std), (tau, pop.tau_std)):
        assert abs(x.mean()) <= 3 * sd / np.sqrt(n)
        # standard error of a Gaussian sample variance is sd**2 * sqrt(2 / (n - 1))
        assert abs(x.var(ddof=1) - sd ** 2) <= 3 * sd ** 2 * np.sqrt(2 / (n - 1))


def test_excessive_rejection_aborts(small_problem):
    _, interp, pop = small_problem
    with pytest.raises(SimulationError, match="noise_std"):
        simulate_cohort(CohortSpec(20, pop, visits=5, seed=6, noise_std=5.0), interp)


def test_random_mesh_is_connected():
    for seed in range(5):
        net = random_mesh(60, seed=seed)
        assert net.is_connected()
        assert net.vertex_coords.shape == (60, 3)


def test_spec_validation(small_problem):
    pop = small_problem[2]
    with pytest.raises(ValueError):
        CohortSpec(0, pop)
    with pytest.raises(ValueError):
        CohortSpec(3, pop, visits=(4, 2))
    with pytest.raises(ValueError):
        CohortSpec(3, pop, interval=0.0)
