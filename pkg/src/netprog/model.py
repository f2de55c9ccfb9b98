"""Generative mixed-effects model of signal propagation on a graph.

A subject ``i`` observed at age ``t`` is predicted at node ``k`` by

    p_k * exp(w_ik / p_k + v_k / p_k * alpha_i * (t - t0 - tau_i))

where ``p`` and ``v`` are the interpolated group fields, ``alpha_i =
exp(xi_i)`` and ``w_i`` is the interpolated space shift made orthogonal to
``v``. Observations carry i.i.d. Gaussian noise of standard deviation
``noise_std``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import EXPONENT_LIMIT, OverflowGuardError
from .network import InterpolationOperator, interpolate_field

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class InvalidPopulationError(ValueError):
    """Population parameters whose p-field is not strictly positive."""


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class PopulationParameters:
    t0: float
    beta_p: np.ndarray
    beta_v: np.ndarray
    noise_std: float
    xi_std: float = 0.5
    tau_std: float = 5.0
    w_std: float = 0.1

    def __post_init__(self):
        bp = np.array(self.beta_p, dtype=float).ravel()
        bv = np.array(self.beta_v, dtype=float).ravel()
        if bp.shape != bv.shape:
            raise ValueError(f"beta_p and beta_v lengths differ: {bp.shape} vs {bv.shape}")
        for name in ("noise_std", "xi_std", "tau_std", "w_std"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val!r}")
            object.__setattr__(self, name, float(val))
        bp.setflags(write=False)
        bv.setflags(write=False)
        object.__setattr__(self, "beta_p", bp)
        object.__setattr__(self, "beta_v", bv)
        object.__setattr__(self, "t0", float(self.t0))

    @property
    def num_controls(self) -> int:
        return len(self.beta_p)

    def replace(self, **changes) -> "PopulationParameters":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, PopulationParameters):
            return NotImplemented
        return (self.t0 == other.t0
                and np.array_equal(self.beta_p, other.beta_p)
                and np.array_equal(self.beta_v, other.beta_v)
                and self.noise_std == other.noise_std
                and self.xi_std == other.xi_std
                and self.tau_std == other.tau_std
                and self.w_std == other.w_std)


@dataclass(frozen=True)
class IndividualParameters:
    xi: float
    tau: float
    w_coeffs: np.ndarray

    def __post_init__(self):
        w = np.array(self.w_coeffs, dtype=float).ravel()
        w.setflags(write=False)
        object.__setattr__(self, "w_coeffs", w)
        object.__setattr__(self, "xi", float(self.xi))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def alpha(self) -> float:
        return float(np.exp(self.xi))

    @classmethod
    def identity(cls, num_controls: int) -> "IndividualParameters":
        return cls(0.0, 0.0, np.zeros(num_controls))

    def __eq__(self, other):
        if not isinstance(other, IndividualParameters):
            return NotImplemented
        return (self.xi == other.xi and self.tau == other.tau
                and np.array_equal(self.w_coeffs, other.w_coeffs))


@dataclass(frozen=True)
class Subject:
    id: str
    ages: np.ndarray
    values: np.ndarray

    @property
    def num_visits(self) -> int:
        return len(self.ages)


def _validate_subject(sid, ages, values, num_nodes=None):
    ages = np.array(ages, dtype=float).ravel()
    values = np.array(values, dtype=float)
    if values.size == 0:
        values = values.reshape(0, num_nodes or 0)
    if values.ndim == 1:
        values = values.reshape(1, -1)
    if values.ndim != 2 or len(values) != len(ages):
        raise DatasetError(f"subject {sid}: {len(ages)} ages but values of shape {values.shape}")
    if num_nodes is not None and values.shape[1] != num_nodes:
        raise DatasetError(
            f"subject {sid}: measurement maps have {values.shape[1]} nodes, expected {num_nodes}")
    if not np.all(np.isfinite(ages)):
        raise DatasetError(f"subject {sid}: non-finite age")
    if np.any(np.diff(ages) <= 0):
        j = int(np.flatnonzero(np.diff(ages) <= 0)[0]) + 1
        raise DatasetError(
            f"subject {sid}: ages must be strictly increasing (visit {j}: {ages[j]} after {ages[j - 1]})")
    bad = ~np.isfinite(values)
    if bad.any():
        j, k = np.argwhere(bad)[0]
        raise DatasetError(f"subject {sid}, visit {j}, node {k}: non-finite value")
    bad = values <= 0
    if bad.any():
        j, k = np.argwhere(bad)[0]
        raise DatasetError(
            f"subject {sid}, visit {j}, node {k}: value {values[j, k]!r} is not strictly positive")
    ages.setflags(write=False)
    values.setflags(write=False)
    return Subject(str(sid), ages, values)


class LongitudinalDataset:
    """Validated repeated measurement maps, one sequence per subject."""

    def __init__(self, subjects: Sequence, num_nodes: int | None = None):
        checked = []
        seen = set()
        for s in subjects:
            if isinstance(s, Subject):
                sid, ages, values = s.id, s.ages, s.values
            else:
                sid, ages, values = s
            if str(sid) in seen:
                raise DatasetError(f"duplicate subject id {sid!r}")
            seen.add(str(sid))
            sub = _validate_subject(sid, ages, values, num_nodes)
            if num_nodes is None and sub.num_visits:
                num_nodes = sub.values.shape[1]
            checked.append(sub)
        if num_nodes is None:
            raise DatasetError("cannot infer the number of nodes from an empty dataset")
        self.subjects: tuple[Subject, ...] = tuple(checked)
        self.num_nodes = int(num_nodes)

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __getitem__(self, i):
        return self.subjects[i]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    @property
    def num_visits(self) -> int:
        return sum(s.num_visits for s in self.subjects)

    @property
    def num_scalar_obs(self) -> int:
        return self.num_visits * self.num_nodes

    def subset(self, idx) -> "LongitudinalDataset":
        return LongitudinalDataset([self.subjects[i] for i in idx], self.num_nodes)

    def stacked(self):
        """``(subject_index, ages, values)`` with one row per visit."""
        sidx = np.concatenate(
            [np.full(s.num_visits, i) for i, s in enumerate(self.subjects)] or [np.zeros(0)]
        ).astype(np.int64)
        ages = np.concatenate([s.ages for s in self.subjects] or [np.zeros(0)])
        values = np.vstack([s.values for s in self.subjects] or [np.zeros((0, self.num_nodes))])
        return sidx, ages, values


def realize_fields(pop: PopulationParameters, interp: InterpolationOperator):
    """Interpolated ``(p_field, v_field)``; raises if ``p`` is not positive."""
    p = interpolate_field(interp, pop.beta_p)
    v = interpolate_field(interp, pop.beta_v)
    if not np.all(p > 0):
        k = int(np.argmin(p))
        raise InvalidPopulationError(
            f"invalid population state: p-field is {p[k]!r} at node {k}")
    return p, v


def project_orthogonal(w, v):
    """Remove from ``w`` its Euclidean component along ``v``.

    ``w`` may hold one field per row. A zero ``v`` leaves ``w`` unchanged.
    """
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    if w.shape[-1] != v.shape[-1]:
        raise ValueError(f"field lengths differ: {w.shape[-1]} vs {v.shape[-1]}")
    vv = float(v @ v)
    if vv == 0.0:
        return w.copy()
    return w - np.multiply.outer(w @ v / vv, v)


def space_shift_fields(w_coeffs, interp: InterpolationOperator, v_field):
    return project_orthogonal(interpolate_field(interp, w_coeffs), v_field)


def trajectory_exponent(p, v, w_fields, alpha, tau, t0, ages):
    """Exponent array ``(n, N_v)`` for per-row shifts, paces, onsets and ages."""
    reparam = np.asarray(alpha * (ages - t0 - tau), dtype=float)
    expo = np.multiply.outer(reparam, v)
    expo += w_fields
    expo /= p
    return expo


def guarded_trajectory(p, expo):
    if expo.size and not np.abs(expo).max() <= EXPONENT_LIMIT:
        raise OverflowGuardError(
            f"trajectory exponent outside +/-{EXPONENT_LIMIT}")
    out = np.exp(expo)
    out *= p
    return out


def forward_map(pop: PopulationParameters, indiv: IndividualParameters,
                interp: InterpolationOperator, t):
    """Noiseless measurement map(s) of one subject at time(s) ``t``."""
    p, v = realize_fields(pop, interp)
    w = space_shift_fields(indiv.w_coeffs, interp, v)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    expo = trajectory_exponent(p, v, w, indiv.alpha, indiv.tau, pop.t0, t_arr)
    out = guarded_trajectory(p, expo)
    return out[0] if np.ndim(t) == 0 else out


def gaussian_logpdf(x, std):
    x = np.asarray(x, dtype=float)
    return -np.log(std) - LOG_SQRT_2PI - 0.5 * (x / std) ** 2


def _visit_loglik(sse, n_scalar, noise_std):
    return -n_scalar * (np.log(noise_std) + LOG_SQRT_2PI) - sse / (2.0 * noise_std ** 2)


def subject_sse(subject: Subject, pop, indiv, interp, fields=None) -> float:
    if subject.num_visits == 0:
        return 0.0
    p, v = realize_fields(pop, interp) if fields is None else fields
    w = space_shift_fields(indiv.w_coeffs, interp, v)
    expo = trajectory_exponent(p, v, w, indiv.alpha, indiv.tau, pop.t0, subject.ages)
    r = guarded_trajectory(p, expo) - subject.values
    return float(np.einsum("ij,ij->", r, r))


def log_likelihood(data: LongitudinalDataset, pop: PopulationParameters,
                   individuals: Sequence[IndividualParameters], interp) -> float:
    """Gaussian log-likelihood of every observation under the model."""
    if len(individuals) != len(data):
        raise ValueError(f"{len(individuals)} individual parameter sets for {len(data)} subjects")
    fields = realize_fields(pop, interp)
    sse = sum(subject_sse(s, pop, ind, interp, fields) for s, ind in zip(data, individuals))
    return float(_visit_loglik(sse, data.num_scalar_obs, pop.noise_std))


def log_prior_individual(pop: PopulationParameters, indiv: IndividualParameters) -> float:
    return float(gaussian_logpdf(indiv.xi, pop.xi_std)
                 + gaussian_logpdf(indiv.tau, pop.tau_std)
                 + np.sum(gaussian_logpdf(indiv.w_coeffs, pop.w_std)))


def log_posterior_individual(subject: Subject, pop: PopulationParameters,
                             indiv: IndividualParameters, interp, fields=None) -> float:
    """Subject log-likelihood plus the log-density of its random effects (unnormalised posterior)."""
    sse = subject_sse(subject, pop, indiv, interp, fields)
    n_scalar = subject.num_visits * interp.num_nodes
    return float(_visit_loglik(sse, n_scalar, pop.noise_std)) + log_prior_individual(pop, indiv)


def log_posterior_gradient(subject: Subject, pop: PopulationParameters,
                           indiv: IndividualParameters, interp, fields=None):
    """Analytic gradient of :func:`log_posterior_individual` in ``(xi, tau)``.

    Also returns the Gauss-Newton curvature of each coordinate, used as a
    step scale by personalisation.
    """
    p, v = realize_fields(pop, interp) if fields is None else fields
    g_xi = -indiv.xi / pop.xi_std ** 2
    g_tau = -indiv.tau / pop.tau_std ** 2
    h_xi = 1.0 / pop.xi_std ** 2
    h_tau = 1.0 / pop.tau_std ** 2
    if subject.num_visits:
        w = space_shift_fields(indiv.w_coeffs, interp, v)
        alpha = indiv.alpha
        expo = trajectory_exponent(p, v, w, alpha, indiv.tau, pop.t0, subject.ages)
        pred = guarded_trajectory(p, expo)
        resid = subject.values - pred
        rate = pred * (v / p)
        d_xi = rate * (alpha * (subject.ages - pop.t0 - indiv.tau))[:, None]
        d_tau = -alpha * rate
        s2 = pop.noise_std ** 2
        g_xi += float(np.einsum("ij,ij->", resid, d_xi)) / s2
        g_tau += float(np.einsum("ij,ij->", resid, d_tau)) / s2
        h_xi += float(np.einsum("ij,ij->", d_xi, d_xi)) / s2
        h_tau += float(np.einsum("ij,ij->", d_tau, d_tau)) / s2
    return np.array([g_xi, g_tau]), np.array([h_xi, h_tau])


_SUM_FIELDS = ("rss", "xi_sum", "xi_sumsq", "tau_sum", "tau_sumsq", "w_sum", "w_sumsq")


@dataclass(frozen=True)
class SufficientStatistics:
    """Aggregates from which the maximisation step is closed-form.

    Sums run over subjects (and control coefficients for ``w``); the
    population latents are carried as their current values.
    """

    rss: float
    n_scalar_obs: int
    n_subjects: int
    n_w: int
    xi_sum: float
    xi_sumsq: float
    tau_sum: float
    tau_sumsq: float
    w_sum: float
    w_sumsq: float
    t0: float
    beta_p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def _moments(self, s1, s2, n):
        if n == 0:
            return 0.0, 0.0
        return s1 / n, s2 / n

    @property
    def xi_moments(self):
        return self._moments(self.xi_sum, self.xi_sumsq, self.n_subjects)

    @property
    def tau_moments(self):
        return self._moments(self.tau_sum, self.tau_sumsq, self.n_subjects)

    @property
    def w_moments(self):
        return self._moments(self.w_sum, self.w_sumsq, self.n_w)

    def merge(self, other: "SufficientStatistics") -> "SufficientStatistics":
        """Combine statistics of two disjoint subject groups at the same latents."""
        if (self.t0 != other.t0 or not np.array_equal(self.beta_p, other.beta_p)
                or not np.array_equal(self.beta_v, other.beta_v)):
            raise ValueError("statistics computed at different population latents")
        sums = {name: getattr(self, name) + getattr(other, name) for name in _SUM_FIELDS}
        return dataclasses.replace(
            self, n_scalar_obs=self.n_scalar_obs + other.n_scalar_obs,
            n_subjects=self.n_subjects + other.n_subjects, n_w=self.n_w + other.n_w, **sums)

    def blend(self, fresh: "SufficientStatistics", step: float) -> "SufficientStatistics":
        """``self + step * (fresh - self)`` on every real-valued component."""
        vals = {}
        for name in _SUM_FIELDS + ("t0",):
            a, b = getattr(self, name), getattr(fresh, name)
            vals[name] = b if step == 1.0 else a + step * (b - a)
        for name in ("beta_p", "beta_v"):
            a, b = getattr(self, name), getattr(fresh, name)
            vals[name] = b.copy() if step == 1.0 else a + step * (b - a)
        return dataclasses.replace(
            self, n_scalar_obs=fresh.n_scalar_obs, n_subjects=fresh.n_subjects,
            n_w=fresh.n_w, **vals)


def statistics_from_arrays(rss, n_scalar_obs, xi, tau, w_coeffs, t0, beta_p, beta_v):
    xi = np.asarray(xi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    w = np.asarray(w_coeffs, dtype=float)
    return SufficientStatistics(
        rss=float(rss), n_scalar_obs=int(n_scalar_obs), n_subjects=len(xi), n_w=int(w.size),
        xi_sum=float(xi.sum()), xi_sumsq=float(xi @ xi),
        tau_sum=float(tau.sum()), tau_sumsq=float(tau @ tau),
        w_sum=float(w.sum()), w_sumsq=float(np.sum(w * w)),
        t0=float(t0), beta_p=np.array(beta_p, dtype=float), beta_v=np.array(beta_v, dtype=float))


def compute_sufficient_statistics(data: LongitudinalDataset, pop: PopulationParameters,
                                  individuals: Sequence[IndividualParameters],
                                  interp) -> SufficientStatistics:
    fields = realize_fields(pop, interp)
    rss = sum(subject_sse(s, pop, ind, interp, fields) for s, ind in zip(data, individuals))
    w = np.array([ind.w_coeffs for ind in individuals]).reshape(len(individuals), -1)
    return statistics_from_arrays(
        rss, data.num_scalar_obs,
        [ind.xi for ind in individuals], [ind.tau for ind in individuals], w,
        pop.t0, pop.beta_p, pop.beta_v)
