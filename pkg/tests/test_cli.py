import csv
import json

import numpy as np
import pytest

from skibapath.cli import EXIT_INCONCLUSIVE, EXIT_OK, EXIT_USAGE, main

LAKE0D_I = "[model]\nkind = lake0d\nscenario = I\n"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.fixture()
def census0d(tmp_path):
    cfg = write(tmp_path, "eq.ini", LAKE0D_I)
    out = tmp_path / "eq"
    assert main(["equilibria", "--config", cfg, "--out", str(out)]) == EXIT_OK
    return out


def test_equilibria_writes_census(census0d):
    r = rows(census0d / "census.csv")
    head = r[0]
    assert head[0] == "id" and "x_0" in head and "lambda_0" in head
    assert len(r) == 4
    m = manifest(census0d)
    assert m["status"] == "ok" and m["exit_code"] == 0
    assert "census.csv" in m["outputs"]


def test_reruns_are_byte_identical(tmp_path, census0d):
    cfg = write(tmp_path, "eq2.ini", LAKE0D_I)
    out = tmp_path / "again"
    assert main(["equilibria", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert (out / "census.csv").read_bytes() == (census0d / "census.csv").read_bytes()


@pytest.mark.parametrize(
    "text",
    [
        LAKE0D_I + "colour = blue\n",
        LAKE0D_I + "[extras]\nx = 1\n",
        "[model]\nscenario = I\n",
        "[model]\nkind = lake0d\nrho = fast\n",
        "not an ini file",
    ],
)
def test_bad_configs_exit_1(tmp_path, text):
    cfg = write(tmp_path, "bad.ini", text)
    assert main(["equilibria", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_missing_config_file(tmp_path):
    assert main(["equilibria", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_bad_arguments(tmp_path):
    cfg = write(tmp_path, "eq.ini", LAKE0D_I)
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["equilibria", "--config", cfg, "--out", str(tmp_path / "o"), "--jobs", "0"]) == EXIT_USAGE


def test_zero_steps_give_header_only_csv(tmp_path):
    cfg = write(tmp_path, "c.ini", LAKE0D_I + "[continuation]\nparameter = b\nmax_steps = 0\nseeds = 0\n")
    out = tmp_path / "c"
    assert main(["cont-eq", "--config", cfg, "--out", str(out)]) == EXIT_OK
    for name in manifest(out)["outputs"]:
        if name.endswith(".csv"):
            assert len(rows(out / name)) == 1


def test_cont_eq_records_fold(tmp_path):
    cfg = write(tmp_path, "c.ini", LAKE0D_I + "[continuation]\nparameter = b\nlower = 0.3\nupper = 1.0\nmax_steps = 400\nseeds = 0\n")
    out = tmp_path / "c"
    assert main(["cont-eq", "--config", cfg, "--out", str(out)]) == EXIT_OK
    ev = rows(out / "events.csv")
    kinds = [r[ev[0].index("kind")] for r in ev[1:]]
    assert "fold" in kinds


def test_stable_path(tmp_path, census0d):
    cfg = write(tmp_path, "p.ini", LAKE0D_I + f"[path]\ncensus = {census0d}/census.csv\ntarget = 0\ngoal = 1\n")
    out = tmp_path / "p"
    assert main(["stable-path", "--config", cfg, "--out", str(out)]) == EXIT_OK
    path = rows(out / "path_main.csv")
    assert len(path) > 2
    census = rows(census0d / "census.csv")
    goal = float(census[2][census[0].index("x_0")])
    x0 = float(path[1][path[0].index("x_0")])
    assert x0 == pytest.approx(goal, abs=1e-9)


def test_unknown_census_id(tmp_path, census0d):
    cfg = write(tmp_path, "p.ini", LAKE0D_I + f"[path]\ncensus = {census0d}/census.csv\ntarget = 7\ngoal = 0\n")
    assert main(["stable-path", "--config", cfg, "--out", str(tmp_path / "p")]) == EXIT_USAGE


def test_skiba_indifference(tmp_path, census0d):
    cfg = write(tmp_path, "s.ini", LAKE0D_I + f"[skiba]\ncensus = {census0d}/census.csv\ntarget_a = nearest 0.45\ntarget_b = nearest 1.44\n")
    out = tmp_path / "s"
    assert main(["skiba", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "structure.json").read_text())["kind"] == "indifference"
    ip = rows(out / "indifference_point.csv")
    assert len(ip) == 2


def test_skiba_threshold_is_inconclusive(tmp_path):
    base = "[model]\nkind = lake0d\nscenario = II\nc = 3.5\n"
    eq = tmp_path / "eq"
    assert main(["equilibria", "--config", write(tmp_path, "e.ini", base), "--out", str(eq)]) == EXIT_OK
    cfg = write(tmp_path, "s.ini", base + f"[skiba]\ncensus = {eq}/census.csv\ntarget_a = nearest 0.42\ntarget_b = nearest 1.0\n")
    out = tmp_path / "s"
    assert main(["skiba", "--config", cfg, "--out", str(out)]) == EXIT_INCONCLUSIVE
    m = manifest(out)
    assert m["status"] == "inconclusive" and m["exit_code"] == EXIT_INCONCLUSIVE
    s = json.loads((out / "structure.json").read_text())
    assert s["kind"] == "threshold"
    assert np.isclose(s["thresholds"][0], 0.891, atol=1e-3)
