"""File formats: mesh CSVs, dataset CSV, parameter bundles and traces.

Every writer goes through :func:`atomic_write`, so an interrupted command
never leaves a truncated output behind.
"""
from __future__ import annotations

import contextlib
import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .model import DatasetError, IndividualParameters, LongitudinalDataset, PopulationParameters
from .network import ControlNodeSet, MeshNetwork, NetworkError, build_network

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed input file; the message names the file and line."""


def fmt(x) -> str:
    return format(float(x), ".17g")


@contextlib.contextmanager
def atomic_write(path, mode="w"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _open_csv(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    fh = open(path, newline="")
    return fh, csv.reader(fh)


def _header(reader, path, expected=None):
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError(f"{path}:1: empty file") from None
    if expected is not None and header[:len(expected)] != list(expected):
        raise FormatError(f"{path}:1: expected header {','.join(expected)}, got {','.join(header)}")
    return header


def _floats(row, path, line):
    try:
        return [float(x) for x in row]
    except ValueError as exc:
        raise FormatError(f"{path}:{line}: {exc}") from None


# -- mesh ------------------------------------------------------------------

def read_mesh(edges_path, vertices_path=None) -> MeshNetwork:
    """Edge list ``src,dst,length`` or ``src,dst`` plus a vertex table ``id,x,y,z``."""
    coords = None
    if vertices_path is not None:
        fh, reader = _open_csv(vertices_path)
        with fh:
            _header(reader, vertices_path, ("id", "x", "y", "z"))
            rows = {}
            for line, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 4:
                    raise FormatError(f"{vertices_path}:{line}: expected 4 fields, got {len(row)}")
                vals = _floats(row, vertices_path, line)
                rows[int(vals[0])] = vals[1:]
        n = len(rows)
        if sorted(rows) != list(range(n)):
            raise FormatError(f"{vertices_path}: vertex ids must be 0..{n - 1}")
        coords = np.array([rows[i] for i in range(n)])

    fh, reader = _open_csv(edges_path)
    with fh:
        header = _header(reader, edges_path)
        if header[:2] != ["src", "dst"] or len(header) not in (2, 3) or (
                len(header) == 3 and header[2] != "length"):
            raise FormatError(f"{edges_path}:1: expected header src,dst[,length]")
        width = len(header)
        edges = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise FormatError(f"{edges_path}:{line}: expected {width} fields, got {len(row)}")
            edges.append(_floats(row, edges_path, line))
    edges = np.array(edges, dtype=float).reshape(-1, width)
    if width == 2 and coords is None:
        raise FormatError(f"{edges_path}: edge list has no lengths and no vertex table was given")
    if coords is not None:
        num_nodes = len(coords)
    else:
        num_nodes = int(edges[:, :2].max()) + 1 if len(edges) else 1
    try:
        return build_network(num_nodes, edges, vertex_coords=coords)
    except NetworkError as exc:
        raise FormatError(f"{edges_path}: {exc}") from None


def write_mesh(net: MeshNetwork, edges_path, vertices_path=None):
    with atomic_write(edges_path) as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "length"])
        for (a, b), length in zip(net.edges, net.lengths):
            w.writerow([int(a), int(b), fmt(length)])
    if vertices_path is not None and net.vertex_coords is not None:
        with atomic_write(vertices_path) as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y", "z"])
            for i, xyz in enumerate(net.vertex_coords):
                w.writerow([i] + [fmt(c) for c in xyz])


def write_distance_matrix(path, dist):
    """Row-major CSV: ``source`` followed by one column per node."""
    values = np.asarray(dist)
    sources = getattr(dist, "sources", np.arange(len(values)))
    with atomic_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(["source"] + [f"node_{k}" for k in range(values.shape[1])])
        for s, row in zip(sources, values):
            w.writerow([int(s)] + [fmt(x) for x in row])


def read_distance_matrix(path):
    fh, reader = _open_csv(path)
    with fh:
        header = _header(reader, path)
        rows = [_floats(r, path, i) for i, r in enumerate(reader, start=2) if r]
    arr = np.array(rows).reshape(-1, len(header))
    return arr[:, 0].astype(np.int64), arr[:, 1:]


# -- dataset ---------------------------------------------------------------

def read_dataset(path, num_nodes=None) -> LongitudinalDataset:
    """Long-form ``subject_id,age,node_0,...`` CSV, one visit per row.

    Rows of one subject need not be contiguous but must come in increasing
    age order.
    """
    fh, reader = _open_csv(path)
    with fh:
        header = _header(reader, path)
        if header[:2] != ["subject_id", "age"] or len(header) < 3:
            raise FormatError(f"{path}:1: expected header subject_id,age,node_0,...")
        nodes = header[2:]
        if nodes != [f"node_{k}" for k in range(len(nodes))]:
            raise FormatError(f"{path}:1: node columns must be node_0..node_{len(nodes) - 1}")
        if num_nodes is not None and len(nodes) != num_nodes:
            raise FormatError(f"{path}:1: {len(nodes)} node columns, mesh has {num_nodes} nodes")
        width = len(header)
        subjects: dict[str, tuple[list, list, list]] = {}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise FormatError(f"{path}:{line}: expected {width} fields, got {len(row)}")
            sid = row[0].strip()
            vals = _floats(row[1:], path, line)
            age, values = vals[0], vals[1:]
            if not np.isfinite(age):
                raise FormatError(f"{path}:{line}: non-finite age")
            ages, maps, lines = subjects.setdefault(sid, ([], [], []))
            if ages and age <= ages[-1]:
                raise FormatError(
                    f"{path}:{line}: subject {sid} age {age} does not increase "
                    f"(previous visit at line {lines[-1]}, age {ages[-1]})")
            bad = [k for k, x in enumerate(values) if not (np.isfinite(x) and x > 0)]
            if bad:
                raise FormatError(
                    f"{path}:{line}: subject {sid} node_{bad[0]} value {values[bad[0]]!r} "
                    "is not strictly positive")
            ages.append(age)
            maps.append(values)
            lines.append(line)
    if not subjects:
        raise FormatError(f"{path}: no visits")
    try:
        return LongitudinalDataset(
            [(sid, a, m) for sid, (a, m, _) in subjects.items()], len(nodes))
    except DatasetError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_maps(path, rows):
    """Write ``(subject_id, age, map)`` rows in the dataset layout."""
    rows = list(rows)
    width = len(rows[0][2]) if rows else 0
    with atomic_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "age"] + [f"node_{k}" for k in range(width)])
        for sid, age, values in rows:
            w.writerow([sid, fmt(age)] + [fmt(x) for x in values])


def write_dataset(path, data: LongitudinalDataset):
    write_maps(path, ((s.id, a, m) for s in data for a, m in zip(s.ages, s.values)))


# -- parameter bundles -----------------------------------------------------

def population_to_dict(pop: PopulationParameters) -> dict:
    return {
        "t0": float(pop.t0),
        "beta_p": [float(x) for x in pop.beta_p],
        "beta_v": [float(x) for x in pop.beta_v],
        "noise_std": float(pop.noise_std),
        "xi_std": float(pop.xi_std),
        "tau_std": float(pop.tau_std),
        "w_std": float(pop.w_std),
    }


def population_from_dict(d: dict) -> PopulationParameters:
    return PopulationParameters(
        d["t0"], d["beta_p"], d["beta_v"], d["noise_std"], d["xi_std"], d["tau_std"], d["w_std"])


def _dump(obj, path):
    # float repr round-trips exactly (at most 17 significant digits)
    with atomic_write(path) as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _load(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if doc.get("format") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported bundle format {doc.get('format')!r}")
    return doc


def write_model(path, pop: PopulationParameters, controls: ControlNodeSet, num_nodes: int,
                extra: dict | None = None):
    doc = {
        "format": FORMAT_VERSION,
        "num_nodes": int(num_nodes),
        "control_nodes": [int(i) for i in controls.indices],
        "bandwidth": float(controls.bandwidth),
        "population": population_to_dict(pop),
    }
    if extra:
        doc.update(extra)
    _dump(doc, path)


def read_model(path):
    """Return ``(population, controls, num_nodes, document)``."""
    doc = _load(path)
    try:
        pop = population_from_dict(doc["population"])
        controls = ControlNodeSet(np.array(doc["control_nodes"], dtype=np.int64), doc["bandwidth"])
        num_nodes = int(doc["num_nodes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid model bundle ({exc})") from None
    if len(controls) != pop.num_controls:
        raise FormatError(f"{path}: {len(controls)} control nodes but {pop.num_controls} coefficients")
    return pop, controls, num_nodes, doc


def write_individuals(path, ids, individuals, extra: dict | None = None):
    doc = {
        "format": FORMAT_VERSION,
        "subjects": [
            {"id": sid, "xi": float(ind.xi), "tau": float(ind.tau),
             "w_coeffs": [float(x) for x in ind.w_coeffs]}
            for sid, ind in zip(ids, individuals)
        ],
    }
    if extra:
        doc.update(extra)
    _dump(doc, path)


def read_individuals(path) -> dict:
    doc = _load(path)
    try:
        return {s["id"]: IndividualParameters(s["xi"], s["tau"], s["w_coeffs"])
                for s in doc["subjects"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid individual parameters ({exc})") from None


def write_trace(path, trace: dict):
    keys = list(trace)
    with atomic_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in zip(*(trace[k] for k in keys)):
            w.writerow([int(x) if k == "iteration" else fmt(x) for k, x in zip(keys, row)])


def write_node_map(path, values):
    with atomic_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(["node", "value"])
        for k, x in enumerate(values):
            w.writerow([k, fmt(x)])


def write_trajectories(path, times, maps):
    maps = np.atleast_2d(maps)
    with atomic_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(["age"] + [f"node_{k}" for k in range(maps.shape[1])])
        for t, row in zip(times, maps):
            w.writerow([fmt(t)] + [fmt(x) for x in row])
