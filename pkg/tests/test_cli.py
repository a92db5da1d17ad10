import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from dtebounds.cli import RunConfig, ConfigError, check_section4, integrated_gain, main, section4_rows
from dtebounds.mtr import MtrOptions

UNIFORM_PAIR = {"f0": {"kind": "uniform", "a": 0, "b": 1}, "f1": {"kind": "uniform", "a": 0.5, "b": 1.5}}


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], float)


def run(*args):
    return CliRunner().invoke(main, list(args))


def test_bounds_none_restriction_equals_makarov(tmp_path):
    cfg = write(tmp_path, "c.json", {**UNIFORM_PAIR, "restriction": None, "delta_max": 1.5, "steps": 7})
    out = str(tmp_path / "b.csv")
    res = run("bounds", "--config", cfg, "--out", out)
    assert res.exit_code == 0, res.output
    header, a = read_csv(out)
    assert header == ["delta", "makarov_lower", "makarov_upper", "restricted_lower", "restricted_upper"]
    assert np.array_equal(a[:, 1:3], a[:, 3:5])
    assert json.loads(open(out + ".json").read())["restriction"]["kind"] == "none"


def test_bounds_section4_config(tmp_path):
    doc = {"f0": {"kind": "normal", "mu": 0, "sigma2": 1}, "f1": {"kind": "chi2_normal_convolution", "k1": 1, "k2": 1},
           "restriction": "mtr", "delta_min": 0, "delta_max": 8, "steps": 81, "mtr": {"multistarts": 2}}
    out = str(tmp_path / "s4.csv")
    res = run("bounds", "--config", write(tmp_path, "c.json", doc), "--out", out, "--seed", "3")
    assert res.exit_code == 0, res.output
    _, a = read_csv(out)
    assert a.shape == (81, 5)
    assert np.all((a[:, 1:] >= 0) & (a[:, 1:] <= 1))
    assert np.all(a[:, 3] >= a[:, 1])


def test_csv_uses_twelve_significant_digits(tmp_path):
    cfg = write(tmp_path, "c.json", {"f0": {"kind": "normal", "mu": 0, "sigma2": 1},
                                     "f1": {"kind": "normal", "mu": 0.3, "sigma2": 2}, "delta_max": 1, "steps": 3})
    out = str(tmp_path / "b.csv")
    assert run("bounds", "--config", cfg, "--out", out).exit_code == 0
    with open(out) as fh:
        cells = [c for line in fh.read().splitlines()[1:] for c in line.split(",")]
    for c in cells:
        assert c == "%.12g" % float(c)


@pytest.mark.parametrize("doc", ["{not json", json.dumps({"f0": {"kind": "normal"}}),
                                 json.dumps({**UNIFORM_PAIR, "delta_min": 2, "delta_max": 1})])
def test_bad_config_exit_2(tmp_path, doc):
    res = run("bounds", "--config", write(tmp_path, "c.json", doc), "--out", str(tmp_path / "x.csv"))
    assert res.exit_code == 2


def test_missing_config_exit_2():
    assert run("bounds").exit_code == 2
    assert run("oracle-check", "--config", "/nonexistent.json").exit_code == 2


def test_oracle_check_dominance_violation_exit_4(tmp_path):
    doc = {"f0": {"kind": "uniform", "a": 0.5, "b": 1.5}, "f1": {"kind": "uniform", "a": 0, "b": 1},
           "restriction": "mtr", "delta_min": 0.25, "delta_max": 1.5, "steps": 3}
    res = run("oracle-check", "--config", write(tmp_path, "c.json", doc), "--grid", "50")
    assert res.exit_code == 4
    assert "dominance" in res.output


def test_oracle_check_uniform_none(tmp_path):
    doc = {**UNIFORM_PAIR, "restriction": "none", "delta_min": 0.25, "delta_max": 1.5, "steps": 6}
    res = run("oracle-check", "--config", write(tmp_path, "c.json", doc), "--grid", "200",
              "--out", str(tmp_path / "o.csv"))
    assert res.exit_code == 0, res.output
    _, a = read_csv(str(tmp_path / "o.csv"))
    assert np.max(np.abs(a[:, 2] - a[:, 3])) <= 0.02 and np.max(np.abs(a[:, 4] - a[:, 5])) <= 0.02


def test_oracle_check_mtr_equal_normals(tmp_path):
    doc = {"f0": {"kind": "normal", "mu": 0, "sigma2": 1}, "f1": {"kind": "normal", "mu": 0, "sigma2": 1},
           "restriction": "mtr", "delta_min": 0.5, "delta_max": 1.5, "steps": 3, "mtr": {"multistarts": 2}}
    out = str(tmp_path / "o.csv")
    res = run("oracle-check", "--config", write(tmp_path, "c.json", doc), "--grid", "200", "--out", out)
    assert res.exit_code == 0, res.output
    _, a = read_csv(out)
    assert np.allclose(a[:, 2], 1.0, atol=1e-6) and np.all(a[:, 3] >= 0.98)


def test_oracle_check_bad_grid(tmp_path):
    doc = {**UNIFORM_PAIR, "delta_max": 1.5}
    assert run("oracle-check", "--config", write(tmp_path, "c.json", doc), "--grid", "1000").exit_code == 2


def test_section4_rows_sandwich():
    rows = section4_rows(1, 1.0, 11, MtrOptions(multistarts=2))
    assert len(rows) == 11 and rows[0][0] == 0.0
    assert check_section4(rows) == []
    assert integrated_gain(rows) >= 0
    bad = [list(r) for r in rows]
    bad[3][4] = bad[3][1] + 0.1
    assert len(check_section4(bad)) == 1


def test_fit_mixture(tmp_path):
    cfg = write(tmp_path, "m.json", {"target": {"kind": "chi2_normal_convolution", "k1": 1, "k2": 1}})
    out = str(tmp_path / "m_out.json")
    res = run("fit-mixture", "--config", cfg, "--out", out)
    assert res.exit_code == 0, res.output
    doc = json.loads(open(out).read())
    assert 1 <= len(doc["weights"]) <= 3 and doc["sup_distance"] <= 0.01
    bad = write(tmp_path, "u.json", {"target": {"kind": "uniform", "a": 0, "b": 1}, "max_components": 1})
    assert run("fit-mixture", "--config", bad, "--tolerance", "1e-6").exit_code == 3
    assert run("fit-mixture", "--config", write(tmp_path, "e.json", "{}")).exit_code == 2


def test_run_config_roy_and_shape():
    ctx = {"z": [0], "m_C": [0.0], "p": [1.0],
           "marginals": [{"d1": 0, "d2": 1, "z": 0, "dist": {"kind": "normal", "mu": 0, "sigma2": 1}},
                         {"d1": 1, "d2": 1, "z": 0, "dist": {"kind": "normal", "mu": 1, "sigma2": 1}}]}
    cfg = RunConfig.from_dict({**UNIFORM_PAIR, "restriction": {"kind": "roy", "context": ctx}, "delta_max": 1})
    assert cfg.roy is not None and cfg.steps == 81
    cfg = RunConfig.from_dict({**UNIFORM_PAIR, "restriction": {"kind": "concave", "w": 0, "t_W": 0, "t0": 1,
                                                               "t1": 2}, "delta_max": 1})
    assert cfg.restriction.shape.S1 == 2.0
    with pytest.raises(ConfigError):
        RunConfig.from_dict([1, 2])
