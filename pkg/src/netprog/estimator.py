"""scikit-learn style front end to the propagation model."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .inference import SamplerConfig, fit
from .model import (
    IndividualParameters,
    LongitudinalDataset,
    PopulationParameters,
    log_likelihood,
)
from .network import MeshNetwork, build_interpolator, geodesic_distances, select_control_nodes
from .personalize import PersonalizationConfig, personalize, predict


def check_dataset(X, num_nodes=None) -> LongitudinalDataset:
    """Coerce ``X`` into a validated :class:`LongitudinalDataset`.

    Accepts a dataset, a long-form DataFrame with ``subject_id``, ``age``
    and ``node_*`` columns, or an iterable of ``(id, ages, maps)`` triples.
    """
    if isinstance(X, LongitudinalDataset):
        if num_nodes is not None and X.num_nodes != num_nodes:
            raise ValueError(f"dataset has {X.num_nodes} nodes, expected {num_nodes}")
        return X
    if hasattr(X, "columns") and hasattr(X, "groupby"):
        cols = [c for c in X.columns if str(c).startswith("node_")]
        if "subject_id" not in X.columns or "age" not in X.columns or not cols:
            raise ValueError("DataFrame needs subject_id, age and node_* columns")
        subjects = []
        for sid, grp in X.groupby("subject_id", sort=False):
            subjects.append((sid, grp["age"].to_numpy(float), grp[cols].to_numpy(float)))
        return LongitudinalDataset(subjects, num_nodes)
    return LongitudinalDataset(list(X), num_nodes)


class NetworkProgressionModel(TransformerMixin, BaseEstimator):
    """Mixed-effects model of signal propagation on a fixed mesh.

    ``fit`` estimates the group-average trajectory with MCMC-SAEM;
    ``transform`` personalises subjects and returns one row
    ``[xi, tau, w_0, ..., w_{N_c-1}]`` per subject; ``predict`` returns the
    personalised measurement maps at each subject's visit ages.

    Parameters
    ----------
    mesh : MeshNetwork
        Graph shared by every subject.
    n_control : int
        Number of control nodes carrying kernel coefficients.
    bandwidth : float or None
        Kernel bandwidth; ``None`` uses the mean distance from a node to
        its nearest control node.
    control_seed : int
        Seed of the first farthest-point pick.
    random_state : int
        Seed of the SAEM chain and of personalisation.
    """

    def __init__(self, mesh: MeshNetwork | None = None, n_control=20, bandwidth=None,
                 control_seed=0, n_iterations=10_000, burn_in=3_000, sa_exponent=0.65,
                 target_acceptance=0.3, adaptation_rate=0.1, trace_interval=50,
                 random_state=0, n_jobs=None, personalization="map",
                 n_personalize_iterations=2000):
        self.mesh = mesh
        self.n_control = n_control
        self.bandwidth = bandwidth
        self.control_seed = control_seed
        self.n_iterations = n_iterations
        self.burn_in = burn_in
        self.sa_exponent = sa_exponent
        self.target_acceptance = target_acceptance
        self.adaptation_rate = adaptation_rate
        self.trace_interval = trace_interval
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.personalization = personalization
        self.n_personalize_iterations = n_personalize_iterations

    def _sampler_config(self):
        return SamplerConfig(
            n_iterations=self.n_iterations, burn_in=self.burn_in, sa_exponent=self.sa_exponent,
            target_acceptance=self.target_acceptance, adaptation_rate=self.adaptation_rate,
            trace_interval=self.trace_interval, seed=self.random_state, n_jobs=self.n_jobs)

    def _personalization_config(self):
        return PersonalizationConfig(mode=self.personalization,
                                     n_mcmc_iterations=self.n_personalize_iterations,
                                     seed=self.random_state)

    def fit(self, X, y=None, population_init: PopulationParameters | None = None):
        if not isinstance(self.mesh, MeshNetwork):
            raise ValueError("mesh must be a MeshNetwork")
        data = check_dataset(X, self.mesh.num_nodes)
        self.controls_ = select_control_nodes(
            self.mesh, self.n_control, seed=self.control_seed, bandwidth=self.bandwidth)
        self.interpolator_ = build_interpolator(
            geodesic_distances(self.mesh, self.controls_.indices), self.controls_)
        result = fit(data, self.interpolator_, self._sampler_config(), init=population_init)
        self.result_ = result
        self.population_ = result.population
        self.individuals_ = result.individuals_averaged
        self.subject_ids_ = list(result.subject_ids)
        self.trace_ = result.trace
        self.n_nodes_in_ = data.num_nodes
        return self

    def personalize(self, X) -> list[IndividualParameters]:
        check_is_fitted(self, "population_")
        data = check_dataset(X, self.n_nodes_in_)
        config = self._personalization_config()
        return [personalize(s, self.population_, self.interpolator_, config, stream_id=i)
                for i, s in enumerate(data)]

    def transform(self, X):
        params = self.personalize(X)
        return np.array([np.concatenate([[p.xi, p.tau], p.w_coeffs]) for p in params])

    def predict(self, X, ages=None):
        """Personalise every subject, then predict at its visit ages (or ``ages``)."""
        data = check_dataset(X, getattr(self, "n_nodes_in_", None))
        params = self.personalize(data)
        return [predict(self.population_, p, self.interpolator_, s.ages if ages is None else ages)
                for s, p in zip(data, params)]

    def predict_maps(self, individuals, ages):
        check_is_fitted(self, "population_")
        return [predict(self.population_, ind, self.interpolator_, ages) for ind in individuals]

    def score(self, X, y=None):
        """Mean log-likelihood per scalar observation after personalisation."""
        data = check_dataset(X, getattr(self, "n_nodes_in_", None))
        params = self.personalize(data)
        return log_likelihood(data, self.population_, params, self.interpolator_) / data.num_scalar_obs
