"""Batch command line front end.

Each invocation runs one command on a strict INI configuration and writes
CSV files plus a JSON manifest into the output directory.  Column schemas
are listed in ``docs/csv_schemas.md``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
nonconvergence, 3 inconclusive analysis.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .analysis import classify_structure, find_indifference_point, stall_point
from .bvp import BvpOptions, MeshSolution
from .equilibrium import (
    ContinuationOptions,
    bifurcation_tree,
    equilibria_0d,
    equilibria_at,
    lift_flat,
    merge_equilibria,
    newton_solve,
)
from .errors import NonConvergenceError, NumericalError, SkibaPathError, SpecificationError
from .homotopy import (
    HomotopyOptions,
    continue_indifference_point,
    continue_path,
    enable_moving_horizon,
    stable_path_homotopy,
    stable_path_homotopy_nonspp,
)
from .model import SCENARIO_I, SCENARIO_II, ModelParams, make_model

log = logging.getLogger("skibapath")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 1, 2, 3
LOG_ENV = "SKIBAPATH_LOG"


class ConfigError(SkibaPathError, ValueError):
    """Malformed, incomplete or unknown configuration entries."""


class Inconclusive(SkibaPathError):
    """The analysis finished without a definite answer."""


# --------------------------------------------------------------------------
# configuration

_FLOAT, _INT, _STR, _BOOL = float, int, str, "bool"

SCHEMA = {
    "model": {
        "kind": _STR, "scenario": _STR, "rho": _FLOAT, "b": _FLOAT, "c": _FLOAT,
        "D": _FLOAT, "L": _FLOAT, "N": _INT,
    },
    "continuation": {
        "parameter": _STR, "lower": _FLOAT, "upper": _FLOAT, "max_steps": _INT,
        "init_step": _FLOAT, "max_step": _FLOAT, "min_step": _FLOAT, "tol": _FLOAT,
        "depth": _INT, "amplitude": _FLOAT, "sub_max_steps": _INT, "sub_max_step": _FLOAT,
        "seeds": _STR, "compress": _BOOL,
    },
    "homotopy": {
        "init_step": _FLOAT, "max_step": _FLOAT, "min_step": _FLOAT, "max_steps": _INT,
        "T0": _FLOAT, "newton_tol": _FLOAT, "max_horizon_factor": _FLOAT, "end_tolerance": _FLOAT,
    },
    "moving_horizon": {
        "init_step": _FLOAT, "max_step": _FLOAT, "max_steps": _INT, "epsilon": _FLOAT,
    },
    "bvp": {
        "abstol": _FLOAT, "reltol": _FLOAT, "max_intervals": _INT, "newton_tol": _FLOAT,
    },
    "path": {
        "census": _STR, "target": _STR, "goal": _STR, "goal_file": _STR, "mode": _STR,
        "free_vectors": _STR, "samples": _INT,
    },
    "skiba": {
        "census": _STR, "target_a": _STR, "target_b": _STR, "anchor": _STR,
        "continue_steps": _INT, "continue_init_step": _FLOAT,
    },
    "skiba_cont": {
        "census": _STR, "from": _STR, "to": _STR, "direction": _STR,
    },
}

REQUIRED = {
    "equilibria": {"model": ("kind",)},
    "cont-eq": {"model": ("kind",), "continuation": ("parameter",)},
    "stable-path": {"model": ("kind",), "path": ("census", "target")},
    "skiba": {"model": ("kind",), "skiba": ("census", "target_a", "target_b")},
    "skiba-cont": {"model": ("kind",), "skiba_cont": ("census", "from", "to")},
}


@dataclass
class RunConfig:
    command: str
    sections: dict
    source: str = ""
    base_dir: str = "."

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def section(self, name) -> dict:
        return dict(self.sections.get(name, {}))

    def path(self, section, key):
        value = self.get(section, key)
        if value is None:
            return None
        return value if os.path.isabs(value) else os.path.normpath(os.path.join(self.base_dir, value))

    def snapshot(self) -> dict:
        return {s: {k: v for k, v in d.items()} for s, d in self.sections.items()}


def _convert(kind, raw, where):
    try:
        if kind == _BOOL:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def load_config(path: str, command: str) -> RunConfig:
    """Parse and validate a configuration file for ``command``.

    Raises
    ------
    ConfigError
        Missing file, unknown section or key, bad value or missing
        required key.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True, default_section="__none__")
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    sections = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        sec = {}
        for key, raw in parser.items(name):
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            sec[key] = _convert(SCHEMA[name][key], raw, f"[{name}] {key}")
        sections[name] = sec
    for name, keys in REQUIRED[command].items():
        for key in keys:
            if key not in sections.get(name, {}):
                raise ConfigError(f"missing required key {key!r} in [{name}]")
    cfg = RunConfig(command, sections, os.path.abspath(path), os.path.dirname(os.path.abspath(path)))
    model_params(cfg)
    return cfg


def model_params(cfg: RunConfig) -> ModelParams:
    m = cfg.section("model")
    kind = m.pop("kind")
    if kind not in ("lake0d", "lake1d"):
        raise ConfigError(f"[model] kind must be lake0d or lake1d, got {kind!r}")
    scenario = m.pop("scenario", None)
    bases = {"I": SCENARIO_I, "II": SCENARIO_II}
    if scenario is not None and scenario not in bases:
        raise ConfigError(f"[model] scenario must be I or II, got {scenario!r}")
    base = bases.get(scenario)
    if base is None and not {"rho", "b", "c"} <= m.keys():
        raise ConfigError("[model] needs a scenario or all of rho, b, c")
    N = m.pop("N", None)
    if kind == "lake1d":
        N = 51 if N is None else N
    elif N is not None:
        raise ConfigError("[model] N applies to lake1d only")
    try:
        if base is None:
            return ModelParams(N=N, **m)
        return base.replace(N=N, **m)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model] {exc}") from exc


def continuation_options(cfg: RunConfig, sub=False) -> ContinuationOptions:
    c = cfg.section("continuation")
    kw = {}
    lower, upper = c.get("lower", -np.inf), c.get("upper", np.inf)
    kw["bounds"] = (lower, upper)
    steps = c.get("sub_max_steps" if sub else "max_steps", c.get("max_steps"))
    if steps is not None:
        kw["max_points"] = steps + 1
    step = c.get("sub_max_step" if sub else "max_step", c.get("max_step"))
    if step is not None:
        kw["max_step"] = step
    for key in ("init_step", "min_step", "tol"):
        if key in c:
            kw[key] = c[key]
    return ContinuationOptions(**kw)


def bvp_options(cfg: RunConfig) -> BvpOptions:
    return BvpOptions(**cfg.section("bvp"))


def homotopy_options(cfg: RunConfig, **override) -> HomotopyOptions:
    kw = cfg.section("homotopy")
    kw.update(override)
    if kw.get("end_tolerance") == 0:
        kw["end_tolerance"] = None
    return HomotopyOptions(bvp=bvp_options(cfg), **kw)


# --------------------------------------------------------------------------
# output


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


@dataclass
class RunManifest:
    command: str
    config: dict
    config_file: str
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "running"
    exit_code: int | None = None
    message: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, default=str) + "\n"


class Writer:
    def __init__(self, out_dir: str, manifest: RunManifest):
        self.out = out_dir
        self.manifest = manifest
        os.makedirs(out_dir, exist_ok=True)

    def csv(self, name, header, rows):
        path = os.path.join(self.out, name)
        atomic_write(path, csv_text(header, rows))
        self.manifest.outputs.append(name)
        return path

    def json(self, name, obj):
        path = os.path.join(self.out, name)
        atomic_write(path, json.dumps(obj, indent=2, default=_json_default) + "\n")
        self.manifest.outputs.append(name)

    def event(self, kind, /, **info):
        self.manifest.events.append({"kind": kind, **{k: _json_default(v) for k, v in info.items()}})

    def finish(self):
        self.manifest.finished = _now()
        atomic_write(os.path.join(self.out, "manifest.json"), self.manifest.to_json())


def _json_default(v):
    if isinstance(v, np.ndarray):
        return [float(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _component_header(n):
    return [f"x_{i}" for i in range(n)] + [f"lambda_{i}" for i in range(n)]


# --------------------------------------------------------------------------
# census persistence

CENSUS_FILE = "census.csv"
CENSUS_HEAD = ["id", "kind", "flat", "spp", "n_s", "defect", "admissible", "residual", "objective", "state_norm"]


def census_rows(model, eqs):
    rows = []
    for i, e in enumerate(eqs):
        rows.append(
            [i, e.kind(), e.flat, e.spp, e.spectral.n_s, e.defect, e.admissible, e.residual_norm,
             float(model.objective_value(e.point)), float(model.spatial_norm(e.states))] + list(e.point)
        )
    return rows


def load_census(model, path):
    """Re-converge the equilibria of a census file in id order."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read census: {exc}") from exc
    cols = _component_header(model.n)
    eqs = []
    for r in rows:
        try:
            X = np.array([float(r[c]) for c in cols])
        except KeyError as exc:
            raise ConfigError(f"census does not match the model dimension ({exc} missing)") from exc
        eqs.append(newton_solve(model, X))
    return eqs


def select(model, eqs, selector: str):
    """Pick an equilibrium by integer id or by ``nearest v[,v...]``."""
    s = selector.strip()
    if s.lstrip("-").isdigit():
        i = int(s)
        if not 0 <= i < len(eqs):
            raise ConfigError(f"equilibrium id {i} outside census of size {len(eqs)}")
        return i, eqs[i]
    if s.startswith("nearest"):
        x = _vector(s[len("nearest"):], model.n)
        d = [float(model.spatial_norm(e.states - x)) for e in eqs]
        i = int(np.argmin(d))
        return i, eqs[i]
    raise ConfigError(f"bad equilibrium selector {selector!r}")


def _vector(text, n):
    try:
        v = np.array([float(t) for t in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ConfigError(f"bad vector {text!r}") from exc
    if v.size == 1:
        return np.full(n, v[0])
    if v.size != n:
        raise ConfigError(f"vector has {v.size} entries, model has {n} states")
    return v


# --------------------------------------------------------------------------
# paths on disk


def path_rows(model, sol: MeshSolution, offset=0):
    n, d = model.n, model.dim
    Y = sol.y[:, offset : offset + d]
    with np.errstate(all="ignore"):
        U = model.control(Y)
    return [[s, s * sol.T] + list(Y[k]) + list(np.atleast_1d(U[k])) for k, s in enumerate(sol.mesh)]


def path_header(n):
    return ["s", "t"] + _component_header(n) + [f"u_{i}" for i in range(n)]


def load_path(model, path) -> MeshSolution:
    """Rebuild a mesh solution from a path CSV; midpoints from the collocation relation."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    cols = _component_header(model.n)
    s = np.array([float(r["s"]) for r in rows])
    t = np.array([float(r["t"]) for r in rows])
    Y = np.array([[float(r[c]) for c in cols] for r in rows])
    T = t[-1] / s[-1]
    F = T * model.rhs(Y, check=False)
    h = np.diff(s)[:, None]
    ymid = 0.5 * (Y[:-1] + Y[1:]) + h / 8.0 * (F[:-1] - F[1:])
    return MeshSolution(s, Y, ymid, np.zeros(1), yp=F, T=T)


SLICE_HEAD = ["step", "kappa", "state_norm", "costate_norm", "objective", "admissible", "T"]


def slice_rows(run):
    m = run.model
    n = m.n
    rows = []
    for st in run.steps:
        x = st.solution.y[0]
        with np.errstate(all="ignore"):
            J = float(m.hamiltonian(x, check=False)) / m.params.rho
        rows.append([st.index, st.kappa, float(m.spatial_norm(x[:n])), float(m.spatial_norm(x[n:])), J,
                     st.admissible, st.solution.T])
    return rows


def _write_parameters(w: Writer, run, label):
    k = max(len(st.solution.p) for st in run.steps)
    rows = [[st.index] + list(st.solution.p) + [float("nan")] * (k - len(st.solution.p)) for st in run.steps]
    w.csv(f"parameters_{label}.csv", ["step"] + [f"p_{i}" for i in range(k)], rows)


def _record_run(w: Writer, run, label):
    for ev in run.events:
        w.event(ev.kind, run=label, step=ev.step, info=ev.info)
    w.event("run_end", run=label, status=run.status, kappa=run.final.kappa if run.steps else float("nan"))


# --------------------------------------------------------------------------
# commands


def cmd_equilibria(cfg: RunConfig, w: Writer, jobs=1):
    params = model_params(cfg)
    model = make_model(params)
    if not params.spatial:
        eqs = equilibria_0d(model)
    else:
        base = equilibria_0d(make_model(params.replace(N=None)))
        flat = []
        for e in base:
            try:
                flat.append(newton_solve(model, lift_flat(e, params)))
            except NonConvergenceError as exc:
                log.warning("lifted equilibrium did not converge: %s", exc)
        eqs = flat
        if "continuation" in cfg.sections:
            branches = _tree(cfg, model, flat, jobs)
            eqs = merge_equilibria(flat + equilibria_at(branches, getattr(params, branches[0].parameter_name)))
            w.event("census", branches=len(branches))
    if not eqs:
        log.warning("no equilibrium found")
    eqs = sorted(eqs, key=lambda e: (not e.flat, float(model.spatial_norm(e.states)), tuple(e.states)))
    w.csv(CENSUS_FILE, CENSUS_HEAD + _component_header(model.n), census_rows(model, eqs))
    w.event("equilibria", count=len(eqs), spp=sum(e.spp for e in eqs))
    return EXIT_OK


def _tree(cfg, model, flat, jobs):
    c = cfg.section("continuation")
    parameter = c["parameter"]
    if parameter not in ("rho", "b", "c", "D", "L"):
        raise ConfigError(f"cannot continue in {parameter!r}")
    seeds = flat
    if "seeds" in c and c["seeds"].strip() != "all":
        try:
            idx = [int(t) for t in c["seeds"].replace(",", " ").split()]
            seeds = [flat[i] for i in idx]
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad [continuation] seeds {c['seeds']!r}") from exc
    if not seeds:
        raise SpecificationError("no seed equilibria to continue")
    return bifurcation_tree(
        model, seeds, parameter, continuation_options(cfg), continuation_options(cfg, sub=True),
        depth=c.get("depth", 0), amplitude=c.get("amplitude", 0.01), jobs=jobs,
    )


def cmd_cont_eq(cfg: RunConfig, w: Writer, jobs=1):
    from .spectral import classify

    params = model_params(cfg)
    model = make_model(params)
    c = cfg.section("continuation")
    n = model.n
    compress = c.get("compress", params.spatial)
    head = ["step", "parameter", "n_s", "spp", "state_norm", "costate_norm"]
    if not compress:
        head += _component_header(n)
    if c.get("max_steps", 1) == 0:
        w.csv("branch_000.csv", head, [])
        w.csv("events.csv", ["branch", "index", "kind", "parameter", "state_norm"], [])
        return EXIT_OK
    if params.spatial:
        base = equilibria_0d(make_model(params.replace(N=None)))
        flat = [newton_solve(model, lift_flat(e, params)) for e in base]
    else:
        flat = equilibria_0d(model)
    branches = _tree(cfg, model, flat, jobs)
    ev_rows = []
    for k, br in enumerate(branches):
        rows = []
        for i, y in enumerate(br.points):
            X, p = y[:-1], y[-1]
            m = model.with_params(**{br.parameter_name: p})
            sd = classify(m.jacobian(X))
            row = [i, p, sd.n_s, sd.spp, float(m.spatial_norm(X[:n])), float(m.spatial_norm(X[n:]))]
            rows.append(row if compress else row + list(X))
        w.csv(f"branch_{k:03d}.csv", head, rows)
        for e in br.events:
            ev_rows.append([k, e.index, e.kind, e.parameter_value, float(model.spatial_norm(e.point[:n]))])
            w.event(e.kind, branch=k, parameter=e.parameter_value)
        w.event("branch_end", branch=k, reason=br.stop_reason, points=len(br.points))
    w.csv("events.csv", ["branch", "index", "kind", "parameter", "state_norm"], ev_rows)
    return EXIT_OK


def _write_path_run(w, model, run, label):
    w.csv(f"slice_{label}.csv", SLICE_HEAD, slice_rows(run))
    w.csv(f"path_{label}.csv", path_header(model.n), path_rows(model, run.final.solution))
    _write_parameters(w, run, label)
    _record_run(w, run, label)


def _moving(cfg, run):
    if "moving_horizon" not in cfg.sections or run.target_hit:
        return run
    mh = cfg.section("moving_horizon")
    eps = mh.pop("epsilon", None)
    opts = homotopy_options(cfg, **mh)
    return enable_moving_horizon(run, eps, opts)


def cmd_stable_path(cfg: RunConfig, w: Writer, jobs=1):
    params = model_params(cfg)
    model = make_model(params)
    eqs = load_census(model, cfg.path("path", "census"))
    tid, target = select(model, eqs, cfg.get("path", "target"))
    goal = _goal(cfg, model, eqs)
    mode = cfg.get("path", "mode", "spp")
    # an explicit [moving_horizon] section replaces the automatic hand-over
    opts = homotopy_options(cfg, **({"end_tolerance": None} if "moving_horizon" in cfg.sections else {}))
    if mode == "spp":
        run = stable_path_homotopy(model, target, goal, opts)
    elif mode == "nonspp":
        need = model.n - target.spectral.n_s
        spec = cfg.get("path", "free_vectors", "ones")
        vecs = [_free_vector(t, model.n) for t in spec.split(";")]
        if len(vecs) != need:
            raise ConfigError(f"target defect needs {need} free vector(s), config gives {len(vecs)}")
        run = stable_path_homotopy_nonspp(model, target, target.states, goal, vecs, opts)
    else:
        raise ConfigError(f"[path] mode must be spp or nonspp, got {mode!r}")
    run = _moving(cfg, run)
    _write_path_run(w, model, run, "main")
    sp = stall_point(run)
    if sp is not None:
        w.event("stall_point", kappa=sp[0], state_norm=float(model.spatial_norm(sp[1])))
        w.csv("stall_point.csv", ["kappa"] + [f"x_{i}" for i in range(model.n)], [[sp[0]] + list(sp[1])])
    w.event("stable_path", target=tid, status=run.status, kappa=run.final.kappa)
    return EXIT_OK


def _free_vector(text, n):
    t = text.strip()
    if t == "ones":
        return np.ones(n)
    return _vector(t, n)


def _goal(cfg, model, eqs):
    gf = cfg.path("path", "goal_file")
    g = cfg.get("path", "goal")
    if (gf is None) == (g is None):
        raise ConfigError("[path] needs exactly one of goal, goal_file")
    if g is not None:
        return select(model, eqs, g)[1].states
    with open(gf, newline="", encoding="utf-8") as fh:
        row = next(csv.DictReader(fh))
    return np.array([float(row[f"x_{i}"]) for i in range(model.n)])


POINT_HEAD = ["alpha", "classification", "objective_1", "objective_2", "control_jump", "target_1", "target_2", "state_norm"]


def cmd_skiba(cfg: RunConfig, w: Writer, jobs=1):
    params = model_params(cfg)
    model = make_model(params)
    eqs = load_census(model, cfg.path("skiba", "census"))
    ia, a = select(model, eqs, cfg.get("skiba", "target_a"))
    ib, b = select(model, eqs, cfg.get("skiba", "target_b"))
    if ia == ib:
        raise ConfigError("target_a and target_b select the same equilibrium")
    opts = homotopy_options(cfg)
    anchor = cfg.get("skiba", "anchor")
    if anchor is None:
        A = stable_path_homotopy(model, a, b.states, opts)
        C = stable_path_homotopy(model, b, a.states, opts)
        runs = {"a": A, "b": C}
        # runs toward non-saddle equilibria between the targets probe for thresholds
        d = b.states - a.states
        for k, e in enumerate(eqs):
            if e.spp or k in (ia, ib):
                continue
            r = e.states - a.states
            t = (r @ d) / (d @ d)
            if 0 < t < 1 and np.linalg.norm(r - t * d) <= 1e-8 * np.linalg.norm(d):
                runs[f"a_to_{k}"] = stable_path_homotopy(model, a, e.states, opts)
                runs[f"b_to_{k}"] = stable_path_homotopy(model, b, e.states, opts)
    else:
        _, anc = select(model, eqs, anchor)
        A = stable_path_homotopy(model, a, anc.states, opts)
        B = stable_path_homotopy(model, b, anc.states, opts)
        if not B.target_hit:
            raise NonConvergenceError(f"run from target_b did not reach the anchor ({B.status})")
        copts = homotopy_options(
            cfg, max_steps=cfg.get("skiba", "continue_steps", 40), init_step=cfg.get("skiba", "continue_init_step", 2.5)
        )
        C = continue_path(model, b, B.final.solution, a.states, copts)
        runs = {"a": A, "b_anchor": B, "b": C}
    for label, r in runs.items():
        w.csv(f"slice_{label}.csv", SLICE_HEAD, slice_rows(r))
        _record_run(w, r, label)
    sm = [runs["a"].slice_manifold("a"), runs["b"].slice_manifold("b")]
    probes = [r.slice_manifold(label) for label, r in runs.items() if "_to_" in label]
    report = classify_structure(model, eqs, sm, probes)
    w.json("structure.json", {"kind": report.kind, "details": report.details,
                               "thresholds": [float(model.spatial_norm(e.states)) for e in report.thresholds]})
    w.event("structure", structure=report.kind)
    ip = report.indifference_points[0] if report.kind == "indifference" else None
    if ip is None and report.kind == "inconclusive":
        ip = find_indifference_point(sm[0], sm[1])
    if ip is None:
        raise Inconclusive(f"no objective crossing; structure is {report.kind}")
    ids = {id(a): ia, id(b): ib}
    row = [ip.alpha, ip.classification, ip.objectives[0], ip.objectives[1], ip.control_jump,
           ids[id(ip.targets[0])], ids[id(ip.targets[1])], float(model.spatial_norm(ip.states))] + list(ip.states)
    w.csv("indifference_point.csv", POINT_HEAD + [f"x_{i}" for i in range(model.n)], [row])
    for k, p in enumerate(ip.paths, start=1):
        w.csv(f"path_{k}.csv", path_header(model.n), path_rows(model, p))
    w.event("indifference_point", alpha=ip.alpha, gap=abs(ip.objectives[0] - ip.objectives[1]))
    return EXIT_OK


def _read_point(model, directory):
    with open(os.path.join(directory, "indifference_point.csv"), newline="", encoding="utf-8") as fh:
        row = next(csv.DictReader(fh))
    x = np.array([float(row[f"x_{i}"]) for i in range(model.n)])
    return row, x


def cmd_skiba_cont(cfg: RunConfig, w: Writer, jobs=1):
    params = model_params(cfg)
    model = make_model(params)
    eqs = load_census(model, cfg.path("skiba_cont", "census"))
    src, dst = cfg.path("skiba_cont", "from"), cfg.path("skiba_cont", "to")
    try:
        row, x1 = _read_point(model, src)
        _, x2 = _read_point(model, dst)
        paths = (load_path(model, os.path.join(src, "path_1.csv")), load_path(model, os.path.join(src, "path_2.csv")))
    except (OSError, KeyError, StopIteration) as exc:
        raise ConfigError(f"cannot read indifference point files: {exc}") from exc
    targets = (eqs[int(row["target_1"])], eqs[int(row["target_2"])])
    V = _free_vector(cfg.get("skiba_cont", "direction", "ones"), model.n)
    run = continue_indifference_point(model, paths, targets, x1, x2, V, homotopy_options(cfg))
    n, d = model.n, model.dim
    rows = []
    for st in run.steps:
        y = st.solution.y[0]
        with np.errstate(all="ignore"):
            H1 = float(model.hamiltonian(y[:d], check=False))
            H2 = float(model.hamiltonian(y[d:], check=False))
        rows.append([st.index, st.solution.p[0], st.solution.p[1], abs(H1 - H2), float(np.max(np.abs(y[:n] - y[d : d + n]))),
                     float(model.spatial_norm(y[:n])), H1 / model.params.rho] + list(y[:n]))
    head = ["step", "kappa_1", "kappa_2", "hamiltonian_gap", "state_mismatch", "state_norm", "objective"]
    w.csv("indifference_section.csv", head + [f"x_{i}" for i in range(n)], rows)
    _record_run(w, run, "section")
    if not run.target_hit:
        raise Inconclusive(f"indifference continuation ended with status {run.status}")
    return EXIT_OK


COMMANDS = {
    "equilibria": cmd_equilibria,
    "cont-eq": cmd_cont_eq,
    "stable-path": cmd_stable_path,
    "skiba": cmd_skiba,
    "skiba-cont": cmd_skiba_cont,
}


def build_parser():
    p = argparse.ArgumentParser(prog="skibapath", description="Equilibria, stable paths and indifference points.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="INI configuration file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for independent branches")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, args.command)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    manifest = RunManifest(args.command, cfg.snapshot(), cfg.source, started=_now())
    try:
        w = Writer(args.out, manifest)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        code = COMMANDS[args.command](cfg, w, args.jobs)
        manifest.status = "ok"
    except (ConfigError, SpecificationError) as exc:
        code, manifest.status, manifest.message = EXIT_USAGE, "config_error", str(exc)
    except (NonConvergenceError, NumericalError) as exc:
        code, manifest.status, manifest.message = EXIT_NUMERIC, "nonconvergence", str(exc)
    except Inconclusive as exc:
        code, manifest.status, manifest.message = EXIT_INCONCLUSIVE, "inconclusive", str(exc)
    manifest.exit_code = code
    if manifest.message:
        print(f"{manifest.status}: {manifest.message}", file=sys.stderr)
    w.finish()
    return code


if __name__ == "__main__":
    sys.exit(main())
