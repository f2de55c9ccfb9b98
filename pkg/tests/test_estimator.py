import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from netprog import NetworkProgressionModel
from netprog.estimator import check_dataset
from netprog.simulate import CohortSpec, simulate_cohort


@pytest.fixture(scope="module")
def cohort(small_problem):
    net, interp, pop = small_problem
    return net, simulate_cohort(CohortSpec(8, pop, visits=4, seed=12), interp).data


def make(net, **kw):
    return NetworkProgressionModel(mesh=net, n_control=6, n_iterations=30, burn_in=10,
                                   n_personalize_iterations=300, **kw)


def test_params_and_clone(small_problem):
    net = small_problem[0]
    est = make(net, random_state=4)
    params = est.get_params()
    assert params["n_control"] == 6 and params["random_state"] == 4
    est.set_params(sa_exponent=0.8)
    assert clone(est).get_params()["sa_exponent"] == 0.8


def test_not_fitted(cohort):
    net, data = cohort
    with pytest.raises(NotFittedError):
        make(net).transform(data)


def test_fit_transform_predict(cohort):
    net, data = cohort
    est = make(net).fit(data)
    assert est.n_nodes_in_ == net.num_nodes
    assert est.subject_ids_ == data.ids
    z = est.transform(data.subset([0, 1]))
    assert z.shape == (2, 2 + 6)
    maps = est.predict(data.subset([0]))
    assert maps[0].shape == (4, net.num_nodes)
    assert np.isfinite(est.score(data.subset([2, 3])))


def test_fit_is_reproducible(cohort):
    net, data = cohort
    a, b = make(net, random_state=2).fit(data), make(net, random_state=2).fit(data)
    assert a.population_ == b.population_


def test_check_dataset_accepts_triples_and_frames(cohort):
    pd = pytest.importorskip("pandas")
    _, data = cohort
    triples = [(s.id, s.ages, s.values) for s in data]
    assert check_dataset(triples).ids == data.ids
    rows = [{"subject_id": s.id, "age": a, **{f"node_{k}": x for k, x in enumerate(m)}}
            for s in data for a, m in zip(s.ages, s.values)]
    frame = check_dataset(pd.DataFrame(rows), data.num_nodes)
    assert frame.ids == data.ids
    assert frame[3].values.tobytes() == data[3].values.tobytes()


def test_rejects_missing_mesh(cohort):
    with pytest.raises(ValueError, match="MeshNetwork"):
        NetworkProgressionModel().fit(cohort[1])
