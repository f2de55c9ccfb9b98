import csv
import json

import numpy as np
import pytest
import yaml

from netprog import io
from netprog.cli import main
from netprog.model import IndividualParameters
from netprog.network import build_interpolator, build_network, geodesic_distances, select_control_nodes
from netprog.simulate import random_mesh

HEADER = "subject_id,age,node_0,node_1\n"


def write(path, text):
    path.write_text(text)
    return path


# -- dataset loader ------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    p = write(tmp_path / "d.csv", HEADER + "a,70,1.5,2.5\nb,71,1,2\na,72.5,1.25,2.25\n")
    data = io.read_dataset(p, 2)
    assert data.ids == ["a", "b"]
    assert data[0].ages.tolist() == [70.0, 72.5]
    io.write_dataset(tmp_path / "e.csv", data)
    again = io.read_dataset(tmp_path / "e.csv", 2)
    for s, t in zip(data, again):
        assert s.values.tobytes() == t.values.tobytes()


@pytest.mark.parametrize("body,needle", [
    ("a,70,1,1\na,69,1,1\n", ":3: subject a age 69.0 does not increase"),
    ("a,70,1,1\na,70,1,1\n", ":3: subject a age 70.0 does not increase"),
    ("a,70,1,0\n", ":2: subject a node_1 value 0.0 is not strictly positive"),
    ("a,70,1,-2\n", ":2: subject a node_1"),
    ("a,70,1\n", ":2: expected 4 fields, got 3"),
    ("a,70,1,x\n", ":2:"),
])
def test_dataset_diagnostics(tmp_path, body, needle):
    p = write(tmp_path / "d.csv", HEADER + body)
    with pytest.raises(io.FormatError) as err:
        io.read_dataset(p, 2)
    assert needle in str(err.value)
    assert str(p) in str(err.value)


def test_dataset_width_must_match_mesh(tmp_path):
    p = write(tmp_path / "d.csv", HEADER + "a,70,1,1\n")
    with pytest.raises(io.FormatError, match="mesh has 3 nodes"):
        io.read_dataset(p, 3)


# -- mesh files ------------------------------------------------------------------

def test_mesh_round_trip(tmp_path):
    net = random_mesh(30, seed=4)
    io.write_mesh(net, tmp_path / "e.csv", tmp_path / "v.csv")
    again = io.read_mesh(tmp_path / "e.csv")
    np.testing.assert_array_equal(again.edges, net.edges)
    np.testing.assert_array_equal(again.lengths, net.lengths)


def test_mesh_from_vertex_table(tmp_path):
    write(tmp_path / "v.csv", "id,x,y,z\n0,0,0,0\n1,3,4,0\n2,3,4,12\n")
    write(tmp_path / "e.csv", "src,dst\n0,1\n1,2\n")
    net = io.read_mesh(tmp_path / "e.csv", tmp_path / "v.csv")
    assert net.lengths.tolist() == [5.0, 12.0]


def test_mesh_errors_name_the_file(tmp_path):
    p = write(tmp_path / "e.csv", "src,dst,length\n0,1,1.0\n1,2,-1.0\n")
    with pytest.raises(io.FormatError, match="nonpositive length") as err:
        io.read_mesh(p)
    assert str(p) in str(err.value)
    write(tmp_path / "v.csv", "id,x,y,z\n0,0,0,0\n1,1,0,0\n")
    write(tmp_path / "f.csv", "src,dst\n0,5\n")
    with pytest.raises(io.FormatError, match="index out of range"):
        io.read_mesh(tmp_path / "f.csv", tmp_path / "v.csv")


def test_distance_matrix_export(tmp_path):
    net = build_network(3, [(0, 1, 0.1), (1, 2, 0.2)])
    d = geodesic_distances(net)
    io.write_distance_matrix(tmp_path / "d.csv", d)
    sources, values = io.read_distance_matrix(tmp_path / "d.csv")
    assert sources.tolist() == [0, 1, 2]
    assert values.tobytes() == np.asarray(d).tobytes()
    assert "0.30000000000000004" in (tmp_path / "d.csv").read_text()


# -- parameter bundles ---------------------------------------------------------------

def test_model_round_trip(tmp_path, small_problem):
    net, interp, pop = small_problem
    io.write_model(tmp_path / "m.json", pop, interp.controls, net.num_nodes)
    back, controls, n, doc = io.read_model(tmp_path / "m.json")
    assert back == pop
    assert doc["format"] == 1
    assert controls.indices.tolist() == interp.controls.indices.tolist()
    assert controls.bandwidth == interp.controls.bandwidth and n == net.num_nodes


def test_individuals_round_trip(tmp_path):
    inds = [IndividualParameters(0.1, -2.0, [1e-17, 0.3]), IndividualParameters(0.0, 0.0, [0, 0])]
    io.write_individuals(tmp_path / "i.json", ["a", "b"], inds)
    back = io.read_individuals(tmp_path / "i.json")
    assert back["a"] == inds[0] and back["b"] == inds[1]


def test_bad_bundle_format(tmp_path):
    write(tmp_path / "m.json", json.dumps({"format": 2}))
    with pytest.raises(io.FormatError, match="format"):
        io.read_model(tmp_path / "m.json")


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    with pytest.raises(RuntimeError):
        with io.atomic_write(tmp_path / "x.csv") as fh:
            fh.write("partial")
            raise RuntimeError
    assert list(tmp_path.iterdir()) == []


# -- command line ----------------------------------------------------------------------

SMOKE = {"network": {"n_control": 3},
         "simulate": {"n_subjects": 3, "visits": 2, "mesh_nodes": 5,
                      "population": {"min_inside": 0.0}}}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.yaml"
    cfg.write_text(yaml.safe_dump(SMOKE))
    sim, fitted = root / "sim", root / "fit"
    codes = {}
    codes["simulate"] = main(["simulate", "--config", str(cfg), "--out", str(sim), "--seed", "1"])
    mesh = str(sim / "mesh_edges.csv")
    data = str(sim / "data.csv")
    codes["fit"] = main(["fit", "--config", str(cfg), "--mesh", mesh, "--data", data,
                         "--out", str(fitted), "--iterations", "10", "--seed", "4"])
    model = str(fitted / "model.json")
    codes["personalize"] = main(["personalize", "--mesh", mesh, "--data", data, "--model", model,
                                 "--out", str(root / "pers")])
    inds = str(root / "pers" / "individuals.json")
    codes["predict"] = main(["predict", "--mesh", mesh, "--data", data, "--model", model,
                             "--individuals", inds, "--out", str(root / "pred")])
    return {"root": root, "cfg": cfg, "mesh": mesh, "data": data, "model": model,
            "individuals": inds, "codes": codes}


def test_pipeline_exit_codes(pipeline):
    assert pipeline["codes"] == {"simulate": 0, "fit": 0, "personalize": 0, "predict": 0}
    fitted = pipeline["root"] / "fit"
    for name in ("model.json", "trace.csv", "individuals.json"):
        assert (fitted / name).is_file()
    assert (pipeline["root"] / "sim" / "truth.json").is_file()


def test_trace_file(pipeline):
    with open(pipeline["root"] / "fit" / "trace.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["iteration"] == "10"
    assert float(rows[0]["sigma"]) > 0


def test_rerun_is_byte_identical(pipeline):
    out = pipeline["root"] / "refit"
    code = main(["fit", "--config", str(pipeline["cfg"]), "--mesh", pipeline["mesh"],
                 "--data", pipeline["data"], "--out", str(out), "--iterations", "10",
                 "--seed", "4"])
    assert code == 0
    assert (out / "model.json").read_bytes() == (pipeline["root"] / "fit" / "model.json").read_bytes()


def test_missing_dataset(pipeline, capsys, tmp_path):
    missing = tmp_path / "nope.csv"
    code = main(["fit", "--mesh", pipeline["mesh"], "--data", str(missing),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_config_key(pipeline, capsys, tmp_path):
    cfg = write(tmp_path / "c.yaml", "sampler:\n  n_iterations: 5\n  warp_speed: 9\n")
    code = main(["fit", "--config", str(cfg), "--mesh", pipeline["mesh"],
                 "--data", pipeline["data"], "--out", str(tmp_path / "o")])
    assert code == 2
    assert "warp_speed" in capsys.readouterr().err


def test_out_of_range_config_value(pipeline, tmp_path):
    cfg = write(tmp_path / "c.yaml", "sampler:\n  n_iterations: 5\n  sa_exponent: 0.3\n")
    code = main(["fit", "--config", str(cfg), "--mesh", pipeline["mesh"],
                 "--data", pipeline["data"], "--out", str(tmp_path / "o")])
    assert code == 2


def test_numerical_failure_exit_code(pipeline, capsys, tmp_path):
    cfg = write(tmp_path / "c.yaml", yaml.safe_dump(
        {"network": {"n_control": 3}, "simulate": {"n_subjects": 20, "noise_std": 50.0}}))
    code = main(["simulate", "--config", str(cfg), "--mesh", pipeline["mesh"],
                 "--model", pipeline["model"], "--out", str(tmp_path / "o")])
    assert code == 3
    assert "numerical" in capsys.readouterr().err


def test_export_at_reference_time_is_p_field(pipeline, tmp_path):
    out = tmp_path / "exp"
    assert main(["export", "--mesh", pipeline["mesh"], "--model", pipeline["model"],
                 "--out", str(out)]) == 0
    pop, controls, _, _ = io.read_model(pipeline["model"])
    net = io.read_mesh(pipeline["mesh"])
    p = build_interpolator(geodesic_distances(net, controls.indices), controls)(pop.beta_p)
    maps = list(out.glob("map_age_*.csv"))
    assert len(maps) == 1
    values = np.loadtxt(maps[0], delimiter=",", skiprows=1)[:, 1]
    assert values.tobytes() == p.tobytes()
    assert (out / "trajectories.csv").is_file()


def test_predict_matches_export(pipeline, tmp_path):
    data = io.read_dataset(pipeline["data"])
    subject = data[0]
    cfg = write(tmp_path / "c.yaml", yaml.safe_dump(
        {"export": {"subject": subject.id, "ages": [float(a) for a in subject.ages]}}))
    out = tmp_path / "exp"
    assert main(["export", "--config", str(cfg), "--mesh", pipeline["mesh"],
                 "--model", pipeline["model"], "--individuals", pipeline["individuals"],
                 "--out", str(out)]) == 0
    with open(pipeline["root"] / "pred" / "predictions.csv") as fh:
        rows = [r for r in csv.reader(fh)][1:]
    mine = [r[2:] for r in rows if r[0] == subject.id]
    assert len(mine) == subject.num_visits
    for age, expected in zip(subject.ages, mine):
        with open(out / f"map_age_{age:g}.csv") as fh:
            exported = [r[1] for r in csv.reader(fh)][1:]
        assert exported == expected


def test_control_selection_is_stable(pipeline):
    net = io.read_mesh(pipeline["mesh"])
    _, controls, _, _ = io.read_model(pipeline["model"])
    again = select_control_nodes(net, 3, seed=0)
    assert again.indices.tolist() == controls.indices.tolist()
