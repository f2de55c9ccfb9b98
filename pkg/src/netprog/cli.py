"""Command-line entry point: ``netprog {fit,simulate,personalize,predict,export}``.

Settings come from an optional YAML file (``--config``) and are overridden
by flags. Exit codes: 0 success, 2 invalid input or configuration, 3
numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import io
from .geometry import OverflowGuardError
from .inference import NumericalAbort, SamplerConfig, fit
from .model import IndividualParameters, InvalidPopulationError, LongitudinalDataset
from .network import (
    build_interpolator,
    geodesic_distances,
    select_control_nodes,
)
from .personalize import PersonalizationConfig, personalize, predict
from .simulate import CohortSpec, SimulationError, benchmark_population, random_mesh, simulate_cohort

logger = logging.getLogger("netprog")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

SCHEMA = {
    "mesh": None, "mesh_vertices": None, "data": None, "out": None, "model": None,
    "individuals": None, "seed": None,
    "network": {"n_control": None, "bandwidth": None, "seed": None},
    "sampler": {"n_iterations": None, "burn_in": None, "sa_exponent": None,
                "target_acceptance": None, "adaptation_rate": None, "trace_interval": None,
                "seed": None, "initial_proposal_stds": None, "population_prior_stds": None},
    "simulate": {"n_subjects": None, "visits": None, "baseline_age": None, "interval": None,
                 "noise_std": None, "seed": None, "mesh_nodes": None, "mesh_seed": None,
                 "population": {"t0": None, "p_range": None, "v_range": None, "noise_std": None,
                                "xi_std": None, "tau_std": None, "w_std": None, "seed": None,
                                "min_inside": None}},
    "personalize": {"mode": None, "n_mcmc_iterations": None, "seed": None, "step_size": None,
                    "max_steps": None, "tolerance": None, "n_rounds": None,
                    "final_temperature": None},
    "predict": {"ages": None},
    "export": {"ages": None, "grid": {"start": None, "stop": None, "num": None},
               "subject": None},
}


class ConfigError(ValueError):
    pass


def _check_keys(cfg, schema, where="config"):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(cfg).__name__}")
    for key, val in cfg.items():
        if key not in schema:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if isinstance(schema[key], dict) and val is not None:
            _check_keys(val, schema[key], f"{where}.{key}")


def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        cfg = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}{line}: {exc}") from None
    try:
        _check_keys(cfg, SCHEMA)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg


def merge_flags(cfg: dict, args) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in cfg.items()}
    for key in ("mesh", "data", "out", "model", "individuals"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.iterations is not None:
        sampler = cfg.setdefault("sampler", {}) or {}
        sampler["n_iterations"] = args.iterations
        cfg["sampler"] = sampler
    return cfg


def _section(cfg, name):
    return dict(cfg.get(name) or {})


def _require(cfg, key):
    if not cfg.get(key):
        raise ConfigError(f"missing required setting {key!r} (flag --{key} or config key)")
    return cfg[key]


def sampler_config(cfg) -> SamplerConfig:
    s = _section(cfg, "sampler")
    if cfg.get("seed") is not None and "seed" not in s:
        s["seed"] = cfg["seed"]
    n = s.get("n_iterations")
    if n is not None and "burn_in" not in s:
        s["burn_in"] = min(int(0.3 * int(n)), int(n) - 1)
    return SamplerConfig(**{k: v for k, v in s.items() if v is not None})


def personalization_config(cfg) -> PersonalizationConfig:
    s = _section(cfg, "personalize")
    if cfg.get("seed") is not None and "seed" not in s:
        s["seed"] = cfg["seed"]
    return PersonalizationConfig(**{k: v for k, v in s.items() if v is not None})


def _load_mesh(cfg):
    return io.read_mesh(_require(cfg, "mesh"), cfg.get("mesh_vertices"))


def _network_artifacts(cfg, net):
    s = _section(cfg, "network")
    controls = select_control_nodes(
        net, int(s.get("n_control") or min(20, net.num_nodes)),
        seed=int(s.get("seed") or 0), bandwidth=s.get("bandwidth"))
    return controls, build_interpolator(geodesic_distances(net, controls.indices), controls)


def _model_artifacts(cfg, net):
    pop, controls, num_nodes, _ = io.read_model(_require(cfg, "model"))
    if num_nodes != net.num_nodes:
        raise ConfigError(f"model has {num_nodes} nodes but the mesh has {net.num_nodes}")
    return pop, controls, build_interpolator(geodesic_distances(net, controls.indices), controls)


def _out_dir(cfg) -> Path:
    out = Path(_require(cfg, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(cfg) -> int:
    net = _load_mesh(cfg)
    data = io.read_dataset(_require(cfg, "data"), net.num_nodes)
    sampler = sampler_config(cfg)
    out = _out_dir(cfg)
    controls, interp = _network_artifacts(cfg, net)
    logger.info("fitting %d subjects, %d visits, %d nodes, %d control nodes, %d iterations",
                len(data), data.num_visits, net.num_nodes, len(controls), sampler.n_iterations)
    result = fit(data, interp, sampler)
    io.write_model(out / "model.json", result.population, controls, net.num_nodes,
                   extra={"fit": {"n_iterations": sampler.n_iterations, "seed": sampler.seed,
                                  "acceptance": {k: (None if np.isnan(v) else v)
                                                 for k, v in result.acceptance.items()}}})
    io.write_trace(out / "trace.csv", result.trace)
    io.write_individuals(out / "individuals.json", result.subject_ids,
                         result.individuals_averaged)
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    s = _section(cfg, "simulate")
    out = _out_dir(cfg)
    seed = int(s.get("seed") if s.get("seed") is not None else cfg.get("seed") or 0)
    if cfg.get("mesh"):
        net = _load_mesh(cfg)
    else:
        net = random_mesh(int(s.get("mesh_nodes") or 200), seed=int(s.get("mesh_seed") or 0))
        io.write_mesh(net, out / "mesh_edges.csv", out / "mesh_vertices.csv")
    if cfg.get("model"):
        pop, controls, interp = _model_artifacts(cfg, net)
    else:
        controls, interp = _network_artifacts(cfg, net)
        popcfg = dict(s.get("population") or {})
        for key in ("p_range", "v_range"):
            if key in popcfg:
                popcfg[key] = tuple(popcfg[key])
        pop = benchmark_population(net, interp, **popcfg)
    visits = s.get("visits", 5)
    spec = CohortSpec(
        n_subjects=int(s.get("n_subjects") or 100), population=pop,
        visits=tuple(visits) if isinstance(visits, list) else int(visits),
        baseline_age=tuple(s.get("baseline_age") or (65.0, 75.0)),
        interval=float(s.get("interval") or 1.0), seed=seed, noise_std=s.get("noise_std"))
    sim = simulate_cohort(spec, interp)
    io.write_dataset(out / "data.csv", sim.data)
    io.write_model(out / "truth.json", pop, controls, net.num_nodes, extra={
        "rejected_visits": sim.rejected,
        "subjects": [{"id": sid, "xi": ind.xi, "tau": ind.tau,
                      "w_coeffs": [float(x) for x in ind.w_coeffs]}
                     for sid, ind in zip(sim.data.ids, sim.individuals)]})
    logger.info("simulated %d subjects (%d visits redrawn)", len(sim.data), sim.rejected)
    return EXIT_OK


def cmd_personalize(cfg) -> int:
    net = _load_mesh(cfg)
    pop, _, interp = _model_artifacts(cfg, net)
    data = io.read_dataset(_require(cfg, "data"), net.num_nodes)
    pconf = personalization_config(cfg)
    out = _out_dir(cfg)
    params = [personalize(s, pop, interp, pconf, stream_id=i) for i, s in enumerate(data)]
    io.write_individuals(out / "individuals.json", data.ids, params)
    return EXIT_OK


def _ages_by_subject(cfg, net, ids):
    ages = _section(cfg, "predict").get("ages")
    if ages is not None:
        return {sid: np.asarray(ages, dtype=float) for sid in ids}
    if not cfg.get("data"):
        raise ConfigError("predict needs ages (predict.ages) or a dataset (--data)")
    data: LongitudinalDataset = io.read_dataset(cfg["data"], net.num_nodes)
    return {s.id: s.ages for s in data}


def cmd_predict(cfg) -> int:
    net = _load_mesh(cfg)
    pop, _, interp = _model_artifacts(cfg, net)
    individuals = io.read_individuals(_require(cfg, "individuals"))
    out = _out_dir(cfg)
    ages = _ages_by_subject(cfg, net, list(individuals))
    rows = []
    for sid, times in ages.items():
        if sid not in individuals:
            raise ConfigError(f"no individual parameters for subject {sid!r}")
        maps = predict(pop, individuals[sid], interp, times)
        rows.extend((sid, t, m) for t, m in zip(times, maps))
    io.write_maps(out / "predictions.csv", rows)
    return EXIT_OK


def cmd_export(cfg) -> int:
    net = _load_mesh(cfg)
    pop, _, interp = _model_artifacts(cfg, net)
    s = _section(cfg, "export")
    out = _out_dir(cfg)
    indiv = IndividualParameters.identity(interp.num_controls)
    if s.get("subject") is not None:
        individuals = io.read_individuals(_require(cfg, "individuals"))
        if s["subject"] not in individuals:
            raise ConfigError(f"no individual parameters for subject {s['subject']!r}")
        indiv = individuals[s["subject"]]
    ages = [float(a) for a in (s.get("ages") or [pop.t0])]
    for age, m in zip(ages, predict(pop, indiv, interp, ages)):
        io.write_node_map(out / f"map_age_{age:g}.csv", m)
    grid = dict(s.get("grid") or {})
    start = float(grid.get("start", min(ages) - 5.0))
    stop = float(grid.get("stop", max(ages) + 5.0))
    times = np.linspace(start, stop, int(grid.get("num", 51)))
    io.write_trajectories(out / "trajectories.csv", times, predict(pop, indiv, interp, times))
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit, "simulate": cmd_simulate, "personalize": cmd_personalize,
    "predict": cmd_predict, "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netprog", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
        p.add_argument("--mesh", help="edge list CSV (src,dst,length)")
        p.add_argument("--data", help="dataset CSV (subject_id,age,node_0,...)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--iterations", type=int, help="number of SAEM iterations")
        p.add_argument("--model", help="model.json parameter bundle")
        p.add_argument("--individuals", help="individuals.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = merge_flags(load_config(args.config), args)
        return COMMANDS[args.command](cfg)
    except (NumericalAbort, OverflowGuardError, InvalidPopulationError, SimulationError,
            FloatingPointError) as exc:
        print(f"netprog {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, ValueError, TypeError, KeyError) as exc:
        print(f"netprog {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
