"""Individual parameters for a subject with the population frozen."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .geometry import OverflowGuardError
from .model import (
    IndividualParameters,
    PopulationParameters,
    Subject,
    forward_map,
    log_posterior_gradient,
    log_posterior_individual,
    realize_fields,
)
from .network import InterpolationOperator

MODES = ("map", "posterior_mean")


@dataclass
class PersonalizationConfig:
    mode: str = "map"
    n_mcmc_iterations: int = 2000
    seed: int = 0
    step_size: float = 1.0
    max_steps: int = 100
    tolerance: float = 1e-10
    n_rounds: int = 3
    final_temperature: float = 1e-4

    def __post_init__(self):
        self.mode = self.mode.replace("-", "_").lower()
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.n_mcmc_iterations) < 1:
            raise ValueError(f"n_mcmc_iterations must be positive, got {self.n_mcmc_iterations}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if int(self.max_steps) < 1 or int(self.n_rounds) < 1:
            raise ValueError("max_steps and n_rounds must be positive")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if not 0 < self.final_temperature <= 1:
            raise ValueError(f"final_temperature must lie in (0, 1], got {self.final_temperature}")
        self.n_mcmc_iterations = int(self.n_mcmc_iterations)
        self.max_steps = int(self.max_steps)
        self.n_rounds = int(self.n_rounds)


@dataclass
class PersonalizationResult:
    params: IndividualParameters
    log_posterior: float
    objective_trace: list = field(default_factory=list)


class _Objective:
    def __init__(self, subject, pop, interp):
        self.subject, self.pop, self.interp = subject, pop, interp
        self.fields = realize_fields(pop, interp)

    def __call__(self, xi, tau, w) -> float:
        try:
            return log_posterior_individual(
                self.subject, self.pop, IndividualParameters(xi, tau, w), self.interp, self.fields)
        except OverflowGuardError:
            return -np.inf

    def gradient(self, xi, tau, w):
        return log_posterior_gradient(
            self.subject, self.pop, IndividualParameters(xi, tau, w), self.interp, self.fields)


def _ascend_time(obj: _Objective, xi, tau, w, cur, config, trace):
    """Coordinate ascent on (xi, tau) with curvature-scaled, backtracked steps."""
    x = np.array([xi, tau])
    for _ in range(config.max_steps):
        moved = 0.0
        for j in (0, 1):
            g, h = obj.gradient(x[0], x[1], w)
            step = config.step_size * g[j] / h[j]
            for _ in range(40):
                trial = x.copy()
                trial[j] += step
                val = obj(trial[0], trial[1], w)
                if val > cur:
                    x, cur = trial, val
                    trace.append(cur)
                    moved = max(moved, abs(step))
                    break
                step *= 0.5
        if moved < config.tolerance:
            break
    return x[0], x[1], cur


def _refine_space_shift(obj: _Objective, xi, tau, w, cur, gen, config, n_steps):
    """Metropolis moves on the shift coefficients under a cooling schedule.

    Returns the best coefficients visited, which only ever improves the
    objective.
    """
    best_w, best = w.copy(), cur
    temps = np.geomspace(1.0, config.final_temperature, n_steps)
    log_std = np.log(obj.pop.w_std * 0.1)
    x, lp = w.copy(), cur
    for temp in temps:
        prop = x + np.exp(log_std) * gen.standard_normal(len(x))
        lp_prop = obj(xi, tau, prop)
        acc = np.log(gen.random()) < (lp_prop - lp) / temp
        if acc:
            x, lp = prop, lp_prop
            if lp > best:
                best_w, best = x.copy(), lp
        log_std += 0.05 * ((1.0 if acc else 0.0) - 0.3)
    return best_w, best


def _polish_space_shift(obj: _Objective, xi, tau, w, cur, config, trace):
    """Damped Gauss-Newton on the shift coefficients, accepting only ascents."""
    p, v = obj.fields
    K = obj.interp.matrix
    vv = float(v @ v)
    PK = K - np.outer(v, v @ K) / vv if vv > 0 else K
    s2 = obj.pop.noise_std ** 2
    prec = 1.0 / obj.pop.w_std ** 2
    subject = obj.subject
    alpha = np.exp(xi)
    reparam = alpha * (subject.ages - obj.pop.t0 - tau)
    for _ in range(config.max_steps):
        expo = (np.outer(reparam, v) + PK @ w) / p
        pred = p * np.exp(expo)
        resid = subject.values - pred
        scale = pred / p
        JtJ = np.einsum("jk,kc,kd->cd", scale ** 2, PK, PK) / s2 + prec * np.eye(len(w))
        grad = np.einsum("jk,kc->c", resid * scale, PK) / s2 - prec * w
        step = np.linalg.solve(JtJ, grad)
        for _ in range(30):
            val = obj(xi, tau, w + step)
            if val > cur:
                break
            step *= 0.5
        else:
            break
        w, cur = w + step, val
        trace.append(cur)
        if np.max(np.abs(step)) < config.tolerance:
            break
    return w, cur


def _posterior_mean(obj: _Objective, nc, gen, config):
    n = config.n_mcmc_iterations
    burn = n // 2
    xi = tau = 0.0
    w = np.zeros(nc)
    lp = obj(xi, tau, w)
    pop = obj.pop
    log_std_t = np.log([0.1 * pop.xi_std, 0.1 * pop.tau_std])
    log_std_w = np.log(0.1 * pop.w_std)
    acc_sum = np.zeros(3)
    for k in range(1, n + 1):
        step = np.exp(log_std_t) * gen.standard_normal(2)
        prop = obj(xi + step[0], tau + step[1], w)
        a1 = np.log(gen.random()) < prop - lp
        if a1:
            xi, tau, lp = xi + step[0], tau + step[1], prop
        w_prop = w + np.exp(log_std_w) * gen.standard_normal(nc)
        prop = obj(xi, tau, w_prop)
        a2 = np.log(gen.random()) < prop - lp
        if a2:
            w, lp = w_prop, prop
        if k <= burn:
            gain = 0.1 * k ** (-0.6)
            log_std_t += gain * (float(a1) - 0.3)
            log_std_w += gain * (float(a2) - 0.3)
        else:
            acc_sum += (xi, tau, 1.0)
            if k == burn + 1:
                w_sum = np.zeros(nc)
            w_sum += w
    count = acc_sum[2]
    return IndividualParameters(acc_sum[0] / count, acc_sum[1] / count, w_sum / count)


def personalize_subject(subject: Subject, pop: PopulationParameters, interp: InterpolationOperator,
                        config: PersonalizationConfig | None = None,
                        stream_id: int = 0) -> PersonalizationResult:
    config = config or PersonalizationConfig()
    nc = interp.num_controls
    obj = _Objective(subject, pop, interp)
    if subject.num_visits == 0:
        ident = IndividualParameters.identity(nc)
        return PersonalizationResult(ident, obj(0.0, 0.0, ident.w_coeffs))
    # visit order must not matter
    order = np.argsort(subject.ages, kind="stable")
    subject = Subject(subject.id, subject.ages[order], subject.values[order])
    obj = _Objective(subject, pop, interp)
    gen = rng.stream(config.seed, stream_id, 1)
    if config.mode == "posterior_mean":
        params = _posterior_mean(obj, nc, gen, config)
        return PersonalizationResult(params, obj(params.xi, params.tau, params.w_coeffs))

    xi = tau = 0.0
    w = np.zeros(nc)
    cur = obj(xi, tau, w)
    if not np.isfinite(cur):
        raise FloatingPointError(f"subject {subject.id}: non-finite posterior at prior mode")
    trace = [cur]
    per_round = max(1, config.n_mcmc_iterations // config.n_rounds)
    for _ in range(config.n_rounds):
        xi, tau, cur = _ascend_time(obj, xi, tau, w, cur, config, trace)
        w, cur = _refine_space_shift(obj, xi, tau, w, cur, gen, config, per_round)
        trace.append(cur)
        w, cur = _polish_space_shift(obj, xi, tau, w, cur, config, trace)
    xi, tau, cur = _ascend_time(obj, xi, tau, w, cur, config, trace)
    return PersonalizationResult(IndividualParameters(xi, tau, w), cur, trace)


def personalize(subject: Subject, pop: PopulationParameters, interp: InterpolationOperator,
                config: PersonalizationConfig | None = None, stream_id: int = 0
                ) -> IndividualParameters:
    """Estimate ``(xi, tau, w_coeffs)`` for one subject.

    MAP mode alternates curvature-scaled coordinate ascent on the time
    parameters with annealed Metropolis refinement of the space shift,
    finished by Gauss-Newton polishing of the shift coefficients;
    posterior-mean mode averages an adaptive Metropolis-within-Gibbs chain.
    With no visits the prior mode (identity parameters) is returned.
    """
    return personalize_subject(subject, pop, interp, config, stream_id).params


def predict(pop: PopulationParameters, indiv: IndividualParameters,
            interp: InterpolationOperator, times) -> np.ndarray:
    """Noiseless measurement maps, one row per requested time."""
    return np.atleast_2d(forward_map(pop, indiv, interp, np.atleast_1d(np.asarray(times, float))))
