"""MCMC-SAEM estimation of the population parameters.

Each iteration runs one Metropolis-within-Gibbs sweep over the latent
variables, updates the stochastic approximation of the sufficient
statistics and maximises the complete likelihood in closed form.
Population parameters ``t0``, ``beta_p`` and ``beta_v`` are themselves
sampled as latents with Gaussian priors centred on the current estimate;
their maximisation step returns the stochastic-approximation average of
the sampled values.
"""
from __future__ import annotations

import dataclasses
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .geometry import EXPONENT_LIMIT
from .model import (
    LOG_SQRT_2PI,
    IndividualParameters,
    LongitudinalDataset,
    PopulationParameters,
    SufficientStatistics,
    gaussian_logpdf,
    project_orthogonal,
    statistics_from_arrays,
)
from .network import InterpolationOperator

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8
STD_CLAMP = (1e-6, 1e3)
BLOCKS = ("t0", "beta_p", "beta_v", "xi_tau", "w")
_BLOCK_ID = {name: i for i, name in enumerate(BLOCKS)}

DEFAULT_PROPOSAL_STDS = {
    "t0": 0.02, "beta_p": 1e-3, "beta_v": 1e-4, "xi": 0.02, "tau": 0.1, "w": 2e-3,
}
DEFAULT_POPULATION_PRIOR_STDS = {"t0": 1.0, "beta_p": 0.1, "beta_v": 0.01}


class NumericalAbort(RuntimeError):
    """The chain reached a state with a non-finite posterior."""


@dataclass
class SamplerConfig:
    n_iterations: int = 10_000
    burn_in: int = 3_000
    sa_exponent: float = 0.65
    target_acceptance: float = 0.3
    adaptation_rate: float = 0.1
    trace_interval: int = 50
    seed: int = 0
    initial_proposal_stds: dict = field(default_factory=lambda: dict(DEFAULT_PROPOSAL_STDS))
    population_prior_stds: dict = field(default_factory=lambda: dict(DEFAULT_POPULATION_PRIOR_STDS))
    n_jobs: int | None = None

    def __post_init__(self):
        if int(self.n_iterations) < 1:
            raise ValueError(f"n_iterations must be positive, got {self.n_iterations}")
        if not 0 <= int(self.burn_in) < int(self.n_iterations):
            raise ValueError(
                f"burn_in must lie in [0, n_iterations), got {self.burn_in} for {self.n_iterations}")
        if not 0.5 < self.sa_exponent <= 1.0:
            raise ValueError(f"sa_exponent must lie in (0.5, 1], got {self.sa_exponent}")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError(f"target_acceptance must lie in (0, 1), got {self.target_acceptance}")
        if not self.adaptation_rate > 0:
            raise ValueError(f"adaptation_rate must be positive, got {self.adaptation_rate}")
        if int(self.trace_interval) < 1:
            raise ValueError(f"trace_interval must be positive, got {self.trace_interval}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        stds = dict(DEFAULT_PROPOSAL_STDS)
        unknown = set(self.initial_proposal_stds) - set(stds)
        if unknown:
            raise ValueError(f"unknown proposal blocks {sorted(unknown)}")
        stds.update(self.initial_proposal_stds)
        priors = dict(DEFAULT_POPULATION_PRIOR_STDS)
        unknown = set(self.population_prior_stds) - set(priors)
        if unknown:
            raise ValueError(f"unknown population priors {sorted(unknown)}")
        priors.update(self.population_prior_stds)
        for name, val in list(stds.items()) + list(priors.items()):
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"std for {name} must be positive, got {val!r}")
        self.initial_proposal_stds = {k: float(v) for k, v in stds.items()}
        self.population_prior_stds = {k: float(v) for k, v in priors.items()}
        self.n_iterations = int(self.n_iterations)
        self.burn_in = int(self.burn_in)
        self.trace_interval = int(self.trace_interval)
        self.seed = int(self.seed)

    def workers(self) -> int:
        n = self.n_jobs
        if n is None:
            n = int(os.environ.get("NETPROG_THREADS", "1") or 1)
        return max(1, int(n))


def sa_step_size(iteration: int, config: SamplerConfig) -> float:
    """Robbins-Monro step: one during burn-in, then ``(k - burn_in) ** -sa_exponent``."""
    if iteration < 1:
        raise ValueError(f"iterations are counted from 1, got {iteration}")
    if iteration <= config.burn_in:
        return 1.0
    return float((iteration - config.burn_in) ** (-config.sa_exponent))


def sa_update(accumulator: SufficientStatistics | None, fresh: SufficientStatistics,
              iteration: int, config: SamplerConfig) -> SufficientStatistics:
    step = sa_step_size(iteration, config)
    if accumulator is None:
        return fresh
    return accumulator.blend(fresh, step)


def maximization_step(stats: SufficientStatistics) -> PopulationParameters:
    """Closed-form update of every population parameter from ``stats``."""
    def var(s1, s2, n):
        if n == 0:
            return VARIANCE_FLOOR
        return max(s2 / n - (s1 / n) ** 2, VARIANCE_FLOOR)

    noise_var = VARIANCE_FLOOR if stats.n_scalar_obs == 0 else max(
        stats.rss / stats.n_scalar_obs, VARIANCE_FLOOR)
    return PopulationParameters(
        t0=stats.t0,
        beta_p=stats.beta_p,
        beta_v=stats.beta_v,
        noise_std=float(np.sqrt(noise_var)),
        xi_std=float(np.sqrt(var(stats.xi_sum, stats.xi_sumsq, stats.n_subjects))),
        tau_std=float(np.sqrt(var(stats.tau_sum, stats.tau_sumsq, stats.n_subjects))),
        w_std=float(np.sqrt(var(stats.w_sum, stats.w_sumsq, stats.n_w))),
    )


def adapt_log_std(log_std, acceptance, iteration, config: SamplerConfig):
    """One step of the acceptance-rate driven scale adaptation."""
    gain = config.adaptation_rate * iteration ** (-0.6)
    out = np.asarray(log_std, dtype=float) + gain * (np.asarray(acceptance) - config.target_acceptance)
    return np.clip(out, np.log(STD_CLAMP[0]), np.log(STD_CLAMP[1]))


def adaptive_metropolis(logpdf, x0, n_samples, config: SamplerConfig | None = None,
                        initial_std=1.0, adapt_steps=None, seed=None):
    """Adaptive random-walk Metropolis for a generic log-density.

    The proposal scale follows the same rule as the SAEM sweep and is frozen
    after ``adapt_steps`` iterations (default: ``config.burn_in``).

    Returns ``(samples, acceptance_after_adaptation, final_std)``.
    """
    config = config or SamplerConfig(n_iterations=max(2, n_samples), burn_in=n_samples // 2)
    adapt_steps = config.burn_in if adapt_steps is None else adapt_steps
    gen = np.random.default_rng(config.seed if seed is None else seed)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    lp = logpdf(x)
    if not np.isfinite(lp):
        raise NumericalAbort("initial point has a non-finite log-density")
    log_std = np.log(initial_std)
    out = np.empty((n_samples, len(x)))
    accepted_after = 0
    for k in range(1, n_samples + 1):
        prop = x + np.exp(log_std) * gen.standard_normal(len(x))
        lp_prop = logpdf(prop)
        acc = bool(np.log(gen.random()) < lp_prop - lp)
        if acc:
            x, lp = prop, lp_prop
        if k <= adapt_steps:
            log_std = float(adapt_log_std(log_std, float(acc), k, config))
        else:
            accepted_after += acc
        out[k - 1] = x
    rate = accepted_after / max(1, n_samples - adapt_steps)
    return out, rate, float(np.exp(log_std))


class _Cohort:
    """Stacked observations with vectorised per-subject residuals."""

    def __init__(self, data: LongitudinalDataset, interp: InterpolationOperator):
        if data.num_nodes != interp.num_nodes:
            raise ValueError(
                f"dataset has {data.num_nodes} nodes, interpolator {interp.num_nodes}")
        self.data = data
        self.K = interp.matrix
        self.sidx, self.ages, self.values = data.stacked()
        self.n_subjects = len(data)
        self.visits = np.array([s.num_visits for s in data], dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.visits)[:-1]]).astype(np.int64)
        self.n_scalar = self.visits * data.num_nodes

    def chunks(self, n_chunks):
        bounds = np.linspace(0, self.n_subjects, n_chunks + 1).astype(int)
        return [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def sse(self, p, v, wproj, xi, tau, t0, subjects=None):
        """Per-subject residual sums of squares; ``inf`` where the exponent overflows.

        ``wproj``, ``xi`` and ``tau`` are indexed by subject. ``subjects`` is
        an optional ``(start, stop)`` range restricting the computation.
        """
        lo, hi = (0, self.n_subjects) if subjects is None else subjects
        if hi <= lo:
            return np.zeros(0)
        r0 = self.starts[lo]
        r1 = self.starts[hi - 1] + self.visits[hi - 1]
        local = self.sidx[r0:r1] - lo
        alpha = np.exp(xi[lo:hi])
        reparam = alpha[local] * (self.ages[r0:r1] - t0 - tau[lo:hi][local])
        expo = np.multiply.outer(reparam, v)
        expo += wproj[lo:hi][local]
        expo /= p
        bad_rows = ~(np.abs(expo).max(axis=1) <= EXPONENT_LIMIT) if expo.size else np.zeros(0, bool)
        if bad_rows.any():
            expo[bad_rows] = 0.0
        np.exp(expo, out=expo)
        expo *= p
        expo -= self.values[r0:r1]
        np.square(expo, out=expo)
        rows = expo.sum(axis=1)
        rows[bad_rows] = np.inf
        out = np.zeros(hi - lo)
        nonempty = self.visits[lo:hi] > 0
        if nonempty.any():
            out[nonempty] = np.add.reduceat(rows, self.starts[lo:hi][nonempty] - r0)
        return out


@dataclass
class SamplerState:
    """Mutable chain state for one SAEM run."""

    t0: float
    beta_p: np.ndarray
    beta_v: np.ndarray
    xi: np.ndarray
    tau: np.ndarray
    w: np.ndarray
    params: PopulationParameters
    log_stds: dict
    iteration: int = 0
    last_acceptance: dict = field(default_factory=dict)
    accept_counts: dict = field(default_factory=dict)
    accept_trials: dict = field(default_factory=dict)
    stats: SufficientStatistics | None = None
    xi_avg: np.ndarray | None = None
    tau_avg: np.ndarray | None = None
    w_avg: np.ndarray | None = None
    # caches tied to the current latents
    p_field: np.ndarray | None = None
    v_field: np.ndarray | None = None
    w_fields: np.ndarray | None = None
    w_proj: np.ndarray | None = None
    sse: np.ndarray | None = None

    def proposal_stds(self, block):
        return np.exp(self.log_stds[block])

    def individual(self, i, averaged=False) -> IndividualParameters:
        if averaged:
            return IndividualParameters(self.xi_avg[i], self.tau_avg[i], self.w_avg[i])
        return IndividualParameters(self.xi[i], self.tau[i], self.w[i])

    def acceptance_rates(self) -> dict:
        return {b: (self.accept_counts.get(b, 0.0) / self.accept_trials[b]
                    if self.accept_trials.get(b) else float("nan")) for b in BLOCKS}


def ridge_fit(K, target, ridge=1e-6):
    """Least-squares control coefficients with a small ridge penalty."""
    K = np.asarray(K, dtype=float)
    A = K.T @ K + ridge * np.eye(K.shape[1])
    return np.linalg.solve(A, K.T @ np.asarray(target, dtype=float))


def initial_population(data: LongitudinalDataset, interp: InterpolationOperator
                       ) -> PopulationParameters:
    """Data-scaled starting point: node means and linear slopes, ridge-fitted."""
    _, ages, values = data.stacked()
    t0 = float(np.mean(ages))
    centred = ages - t0
    mean_map = values.mean(axis=0)
    denom = float(centred @ centred)
    slopes = (centred @ (values - mean_map)) / denom if denom > 0 else np.zeros(data.num_nodes)
    K = interp.matrix
    ridge = 1e-6
    beta_p = ridge_fit(K, mean_map, ridge)
    while not np.all(K @ beta_p > 0):
        ridge *= 10.0
        if ridge > 1e6:
            raise NumericalAbort("could not find a positive initial p-field")
        beta_p = ridge_fit(K, mean_map, ridge)
    beta_v = ridge_fit(K, slopes, 1e-6)
    resid = values - mean_map - np.multiply.outer(centred, slopes)
    noise = float(np.std(resid)) if resid.size else 1.0
    noise = max(noise, np.sqrt(VARIANCE_FLOOR))
    age_spread = float(np.std(ages)) if len(ages) > 1 else 1.0
    row_sum = float(np.mean(K.sum(axis=1)))
    return PopulationParameters(
        t0=t0, beta_p=beta_p, beta_v=beta_v, noise_std=noise,
        xi_std=0.5, tau_std=max(age_spread, 1.0), w_std=noise / row_sum)


class SaemSampler:
    """Holds the fixed inputs of one run and advances a :class:`SamplerState`."""

    def __init__(self, data: LongitudinalDataset, interp: InterpolationOperator,
                 config: SamplerConfig | None = None):
        self.data = data
        self.interp = interp
        self.config = config or SamplerConfig()
        self.cohort = _Cohort(data, interp)
        self.K = interp.matrix
        self._pool = None

    # -- state construction ------------------------------------------------
    def initialize(self, params: PopulationParameters | None = None) -> SamplerState:
        params = params or initial_population(self.data, self.interp)
        n, nc = len(self.data), self.interp.num_controls
        stds = self.config.initial_proposal_stds
        log_stds = {
            "t0": np.log(np.array([stds["t0"]])),
            "beta_p": np.full(nc, np.log(stds["beta_p"])),
            "beta_v": np.full(nc, np.log(stds["beta_v"])),
            "xi_tau": np.log(np.array([stds["xi"], stds["tau"]])),
            "w": np.log(np.array([stds["w"]])),
        }
        state = SamplerState(
            t0=params.t0, beta_p=params.beta_p.copy(), beta_v=params.beta_v.copy(),
            xi=np.zeros(n), tau=np.zeros(n), w=np.zeros((n, nc)), params=params,
            log_stds=log_stds,
            accept_counts={b: 0.0 for b in BLOCKS}, accept_trials={b: 0 for b in BLOCKS},
        )
        self.refresh(state)
        return state

    def refresh(self, state: SamplerState):
        state.p_field = self.K @ state.beta_p
        if not np.all(state.p_field > 0):
            raise NumericalAbort("population state has a nonpositive p-field")
        state.v_field = self.K @ state.beta_v
        state.w_fields = state.w @ self.K.T
        state.w_proj = project_orthogonal(state.w_fields, state.v_field)
        state.sse = self._sse(state.p_field, state.v_field, state.w_proj,
                              state.xi, state.tau, state.t0)
        if not np.all(np.isfinite(state.sse)):
            raise NumericalAbort("current state has a non-finite likelihood")

    # -- likelihood helpers ------------------------------------------------
    def _map_chunks(self, fn):
        workers = self.config.workers()
        chunks = self.cohort.chunks(workers) if workers > 1 else [(0, self.cohort.n_subjects)]
        if len(chunks) <= 1:
            return [fn(c) for c in chunks]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=workers)
        return list(self._pool.map(fn, chunks))

    def _sse(self, p, v, wproj, xi, tau, t0):
        parts = self._map_chunks(lambda c: self.cohort.sse(p, v, wproj, xi, tau, t0, c))
        return np.concatenate(parts) if parts else np.zeros(0)

    def _loglik_from_sse(self, sse, noise_std):
        return (-self.cohort.n_scalar * (np.log(noise_std) + LOG_SQRT_2PI)
                - sse / (2.0 * noise_std ** 2))

    def total_loglik(self, sse, noise_std) -> float:
        # fixed subject order keeps the float sum reproducible
        return float(np.sum(self._loglik_from_sse(sse, noise_std)))

    # -- Gibbs blocks ------------------------------------------------------
    def _population_move(self, state, gen, name, index, prior_mean, prior_std):
        stds = state.log_stds[name]
        cur = state.t0 if name == "t0" else getattr(state, name)[index]
        prop = cur + np.exp(stds[index]) * gen.standard_normal()
        log_u = np.log(gen.random())
        p, v, wproj = state.p_field, state.v_field, state.w_proj
        t0 = state.t0
        if name == "t0":
            t0 = prop
        elif name == "beta_p":
            p = p + self.K[:, index] * (prop - cur)
            if not np.all(p > 0):
                return 0.0
        else:
            v = v + self.K[:, index] * (prop - cur)
            wproj = project_orthogonal(state.w_fields, v)
        sse = self._sse(p, v, wproj, state.xi, state.tau, t0)
        if not np.all(np.isfinite(sse)):
            return 0.0
        noise = state.params.noise_std
        delta = (self.total_loglik(sse, noise) - self.total_loglik(state.sse, noise)
                 + gaussian_logpdf(prop - prior_mean, prior_std)
                 - gaussian_logpdf(cur - prior_mean, prior_std))
        if not log_u < delta:
            return 0.0
        if name == "t0":
            state.t0 = float(prop)
        elif name == "beta_p":
            state.beta_p[index] = prop
            state.p_field = p
        else:
            state.beta_v[index] = prop
            state.v_field = v
            state.w_proj = wproj
        state.sse = sse
        return 1.0

    def _population_block(self, state: SamplerState, gen):
        priors = self.config.population_prior_stds
        params = state.params
        acc = {"t0": np.array([self._population_move(state, gen, "t0", 0, params.t0, priors["t0"])])}
        for name in ("beta_p", "beta_v"):
            means = getattr(params, name)
            acc[name] = np.array([
                self._population_move(state, gen, name, c, means[c], priors[name])
                for c in range(self.interp.num_controls)])
        return acc

    def _subject_draws(self, state, block, dim):
        seed, k = self.config.seed, state.iteration
        n = self.cohort.n_subjects
        steps = np.empty((n, dim))
        log_u = np.empty(n)
        bid = _BLOCK_ID[block]

        def draw(chunk):
            for i in range(*chunk):
                g = rng.stream(seed, k, bid, i)
                steps[i] = g.standard_normal(dim)
                log_u[i] = np.log(g.random())

        self._map_chunks(draw)
        return steps, log_u

    def _subject_prior(self, params, xi, tau, w):
        return (gaussian_logpdf(xi, params.xi_std) + gaussian_logpdf(tau, params.tau_std)
                + gaussian_logpdf(w, params.w_std).sum(axis=-1))

    def _subject_blocks(self, state: SamplerState):
        params = state.params
        noise = params.noise_std
        n = self.cohort.n_subjects
        if n == 0:
            return {"xi_tau": np.zeros(0), "w": np.zeros(0)}
        cur_lp = self._loglik_from_sse(state.sse, noise) + self._subject_prior(
            params, state.xi, state.tau, state.w)

        steps, log_u = self._subject_draws(state, "xi_tau", 2)
        steps *= self.proposal_stds_row(state, "xi_tau")
        xi_new = state.xi + steps[:, 0]
        tau_new = state.tau + steps[:, 1]
        sse = self._sse(state.p_field, state.v_field, state.w_proj, xi_new, tau_new, state.t0)
        new_lp = self._loglik_from_sse(sse, noise) + self._subject_prior(
            params, xi_new, tau_new, state.w)
        ok = log_u < new_lp - cur_lp
        state.xi = np.where(ok, xi_new, state.xi)
        state.tau = np.where(ok, tau_new, state.tau)
        state.sse = np.where(ok, sse, state.sse)
        cur_lp = np.where(ok, new_lp, cur_lp)
        acc_xt = ok.astype(float)

        nc = self.interp.num_controls
        steps, log_u = self._subject_draws(state, "w", nc)
        steps *= self.proposal_stds_row(state, "w")
        w_new = state.w + steps
        wf_new = w_new @ self.K.T
        wp_new = project_orthogonal(wf_new, state.v_field)
        sse = self._sse(state.p_field, state.v_field, wp_new, state.xi, state.tau, state.t0)
        new_lp = self._loglik_from_sse(sse, noise) + self._subject_prior(
            params, state.xi, state.tau, w_new)
        ok = log_u < new_lp - cur_lp
        state.w = np.where(ok[:, None], w_new, state.w)
        state.w_fields = np.where(ok[:, None], wf_new, state.w_fields)
        state.w_proj = np.where(ok[:, None], wp_new, state.w_proj)
        state.sse = np.where(ok, sse, state.sse)
        return {"xi_tau": acc_xt, "w": ok.astype(float)}

    @staticmethod
    def proposal_stds_row(state, block):
        return np.exp(state.log_stds[block])

    def gibbs_sweep(self, state: SamplerState, sample_population=True) -> SamplerState:
        """One Metropolis-within-Gibbs sweep; advances ``state.iteration``."""
        state.iteration += 1
        if not np.all(np.isfinite(state.sse)):
            raise NumericalAbort(f"iteration {state.iteration}: non-finite posterior at current state")
        acc = {}
        if sample_population:
            acc.update(self._population_block(state, rng.stream(self.config.seed, state.iteration, 99)))
        acc.update(self._subject_blocks(state))
        state.last_acceptance = {}
        for block, a in acc.items():
            if len(a):
                state.last_acceptance[block] = float(np.mean(a)) if block in ("xi_tau", "w") else a
                state.accept_counts[block] += float(np.sum(a))
                state.accept_trials[block] += len(a)
        return state

    def adapt_proposals(self, state: SamplerState) -> SamplerState:
        for block, a in state.last_acceptance.items():
            state.log_stds[block] = adapt_log_std(
                state.log_stds[block], a, state.iteration, self.config)
        return state

    # -- SAEM pieces -------------------------------------------------------
    def fresh_statistics(self, state: SamplerState) -> SufficientStatistics:
        return statistics_from_arrays(
            float(np.sum(state.sse)), self.data.num_scalar_obs, state.xi, state.tau, state.w,
            state.t0, state.beta_p, state.beta_v)

    def complete_loglik(self, state: SamplerState) -> float:
        params = state.params
        return self.total_loglik(state.sse, params.noise_std) + float(np.sum(
            self._subject_prior(params, state.xi, state.tau, state.w)))

    def saem_iteration(self, state: SamplerState) -> SamplerState:
        self.gibbs_sweep(state)
        k = state.iteration
        if k <= self.config.burn_in:
            self.adapt_proposals(state)
        state.stats = sa_update(state.stats, self.fresh_statistics(state), k, self.config)
        step = sa_step_size(k, self.config)
        if state.xi_avg is None or step == 1.0:
            state.xi_avg, state.tau_avg, state.w_avg = state.xi.copy(), state.tau.copy(), state.w.copy()
        else:
            state.xi_avg += step * (state.xi - state.xi_avg)
            state.tau_avg += step * (state.tau - state.tau_avg)
            state.w_avg += step * (state.w - state.w_avg)
        state.params = maximization_step(state.stats)
        return state

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


@dataclass
class FitResult:
    population: PopulationParameters
    individuals: list
    individuals_averaged: list
    trace: dict
    acceptance: dict
    subject_ids: list
    config: SamplerConfig

    def trace_rows(self):
        keys = list(self.trace)
        return keys, list(zip(*(self.trace[k] for k in keys)))


TRACE_COLUMNS = ("iteration", "sigma", "t0") + tuple(f"accept_{b}" for b in BLOCKS) + (
    "log_likelihood",)


def fit(data: LongitudinalDataset, interp: InterpolationOperator,
        config: SamplerConfig | None = None, init: PopulationParameters | None = None,
        callback=None) -> FitResult:
    """Run MCMC-SAEM for ``config.n_iterations`` iterations."""
    config = config or SamplerConfig()
    sampler = SaemSampler(data, interp, config)
    state = sampler.initialize(init)
    trace = {c: [] for c in TRACE_COLUMNS}
    window = {b: [] for b in BLOCKS}
    try:
        for k in range(1, config.n_iterations + 1):
            sampler.saem_iteration(state)
            for b, a in state.last_acceptance.items():
                window[b].append(float(np.mean(a)))
            if k % config.trace_interval == 0 or k == config.n_iterations:
                trace["iteration"].append(k)
                trace["sigma"].append(state.params.noise_std)
                trace["t0"].append(state.params.t0)
                for b in BLOCKS:
                    trace[f"accept_{b}"].append(float(np.mean(window[b])) if window[b] else float("nan"))
                    window[b] = []
                ll = sampler.complete_loglik(state)
                if not np.isfinite(ll):
                    raise NumericalAbort(f"iteration {k}: non-finite complete log-likelihood")
                trace["log_likelihood"].append(ll)
                logger.debug("iteration %d sigma %.5g t0 %.5g loglik %.6g",
                             k, state.params.noise_std, state.params.t0, ll)
            if callback is not None:
                callback(state)
    finally:
        sampler.close()
    n = len(data)
    return FitResult(
        population=state.params,
        individuals=[state.individual(i) for i in range(n)],
        individuals_averaged=[state.individual(i, averaged=True) for i in range(n)],
        trace={k: np.asarray(v) for k, v in trace.items()},
        acceptance=state.acceptance_rates(),
        subject_ids=data.ids,
        config=config,
    )
