"""JSON problem files.

A problem file declares its dimensions and then the model blocks; every
matrix is a row-major list of rows.  Example (abridged)::

    {
      "units": "thrust mN, mass kg, time s",
      "dimensions": {"n_p": 2, "m_c": 2, "q": 1, "n_c": 2, "m_a": 8, "n_w": 1},
      "plant": {"A_p": [[0, 1], [0, 0]], "B_p": ..., "C_p": ..., "B_w": ...},
      "controller": {"A_c": ..., "B_c": ..., "C_c": ..., "D_c": ...},
      "influence": {"M_n": ..., "u_bar": [50, ...], "vertices": [...],
                    "theta_range": [0.9, 1.0], "N": ..., "xi": [50, ...]},
      "weights": {"w": [100, 1, 1, 1, 1, 1, 1, 1]},
      "disturbance": {"R": [[1]], "sigma": 1},
      "synthesis": {"mode": "disturbed", "rho": [2, 0.15, 1000], "trace_selector": [[1, 0, ...]]},
      "scenario": {"x_p0": [-0.18, 0], "t_final": 120, "dt": 0.01,
                   "disturbance": {"kind": "piecewise-constant", "breakpoints": [0, 36],
                                   "values": [[0.1667]]}}
    }

``disturbance``, ``synthesis`` and ``scenario`` are optional, as are
``B_w``, ``vertices``, ``theta_range``, ``N`` and ``xi``.  Errors name the
offending field and, when it can be located, the line in the file.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import (AllocatorWeights, ClosedLoop, ControllerModel, DisturbanceClass,
                    InfluenceModel, ModelError, PlantModel, assemble_closed_loop)
from .sim import DisturbanceSignal

DIMENSIONS = ("n_p", "m_c", "q", "n_c", "m_a", "n_w")


class ConfigError(ValueError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = ""
        if field:
            where += f"{field}: "
        if line:
            where = f"line {line}: " + where
        super().__init__(where + message)
        self.field, self.line = field, line


@dataclass
class ProblemConfig:
    closed_loop: ClosedLoop
    disturbance: DisturbanceClass | None
    synthesis: dict
    scenario: dict
    theta_range: tuple | None
    xi: np.ndarray
    raw: dict

    def theta_weights(self, theta: float) -> np.ndarray:
        """Vertex weights for a scalar parameter interpolating two vertices."""
        if self.theta_range is None:
            raise ConfigError("no theta_range declared; give vertex weights instead",
                              "influence.theta_range")
        lo, hi = self.theta_range
        if not lo - 1e-12 <= theta <= hi + 1e-12:
            raise ConfigError(f"theta={theta} outside [{lo}, {hi}]", "influence.theta_range")
        a = (hi - theta) / (hi - lo)
        return np.array([a, 1.0 - a])

    def initial_state(self, x_p0=None) -> np.ndarray:
        cl = self.closed_loop
        x0 = np.zeros(cl.n)
        if x_p0 is None:
            x_p0 = self.scenario.get("x_p0", np.zeros(cl.n_p))
        x_p0 = np.asarray(x_p0, dtype=float).ravel()
        if x_p0.size == cl.n:
            return x_p0.copy()
        if x_p0.size != cl.n_p:
            raise ConfigError(f"initial state needs {cl.n_p} plant entries or {cl.n} total, "
                              f"got {x_p0.size}", "scenario.x_p0")
        x0[:cl.n_p] = x_p0
        return x0

    def disturbance_signal(self, spec=None) -> DisturbanceSignal:
        spec = self.scenario.get("disturbance") if spec is None else spec
        return disturbance_from_dict(spec, max(self.closed_loop.n_w, 1))


def disturbance_from_dict(spec, n_w: int = 1, field: str = "scenario.disturbance") -> DisturbanceSignal:
    if spec is None:
        return DisturbanceSignal.zero(n_w)
    kind = spec.get("kind", "zero")
    try:
        if kind == "zero":
            return DisturbanceSignal.zero(n_w)
        return DisturbanceSignal(kind, spec["breakpoints"], spec["values"])
    except KeyError as exc:
        raise ConfigError(f"missing {exc.args[0]!r}", field) from None
    except ValueError as exc:
        raise ConfigError(str(exc), field) from None


def _line_of(text: str | None, path: str) -> int | None:
    """Best-effort line number of the last key in a dotted field path."""
    if not text:
        return None
    keys = [k for k in re.split(r"[.\[\]]", path) if k and not k.isdigit()]
    pos = 0
    for k in keys:
        m = re.compile(r'"%s"\s*:' % re.escape(k)).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1 if pos else None


class _Reader:
    def __init__(self, data: dict, text: str | None):
        self.data, self.text = data, text

    def fail(self, message, field):
        raise ConfigError(message, field, _line_of(self.text, field))

    def section(self, name, required=True) -> dict:
        sec = self.data.get(name)
        if sec is None:
            if required:
                self.fail("missing section", name)
            return {}
        if not isinstance(sec, dict):
            self.fail("must be an object", name)
        return sec

    def matrix(self, sec, sec_name, key, shape, required=True):
        field = f"{sec_name}.{key}"
        if key not in sec or sec[key] is None:
            if required:
                self.fail("missing matrix", field)
            return None
        return self.matrix_value(sec[key], field, shape)

    def matrix_value(self, val, field, shape):
        if not isinstance(val, list) or not all(isinstance(r, list) for r in val):
            self.fail("must be a list of rows", field)
        rows, cols = shape
        if len(val) != rows:
            self.fail(f"expected {rows} rows, got {len(val)}", field)
        for i, r in enumerate(val):
            if len(r) != cols:
                self.fail(f"row {i} has length {len(r)}, expected {cols}", f"{field}[{i}]")
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in r):
                self.fail(f"row {i} has non-numeric entries", f"{field}[{i}]")
        return np.array(val, dtype=float).reshape(rows, cols)

    def vector(self, sec, sec_name, key, length, required=True):
        field = f"{sec_name}.{key}"
        val = sec.get(key)
        if val is None:
            if required:
                self.fail("missing vector", field)
            return None
        if not isinstance(val, list) or len(val) != length or \
                not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
            self.fail(f"must be a list of {length} numbers", field)
        return np.array(val, dtype=float)


def parse_config(data: dict, text: str | None = None) -> ProblemConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object")
    rd = _Reader(data, text)
    dims = rd.section("dimensions")
    d = {}
    for k in DIMENSIONS:
        v = dims.get(k, 0 if k == "n_w" else None)
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            rd.fail("must be a nonnegative integer", f"dimensions.{k}")
        d[k] = v
    n_p, m_c, q, n_c, m_a, n_w = (d[k] for k in DIMENSIONS)

    ps = rd.section("plant")
    cs = rd.section("controller")
    ins = rd.section("influence")
    ws = rd.section("weights")
    try:
        plant = PlantModel(
            A_p=rd.matrix(ps, "plant", "A_p", (n_p, n_p)),
            B_p=rd.matrix(ps, "plant", "B_p", (n_p, m_c)),
            C_p=rd.matrix(ps, "plant", "C_p", (q, n_p)),
            B_w=rd.matrix(ps, "plant", "B_w", (n_p, n_w), required=n_w > 0),
        )
    except ModelError as exc:
        rd.fail(str(exc), "plant")
    D_c = rd.matrix(cs, "controller", "D_c", (m_c, q), required=False)
    try:
        controller = ControllerModel(
            A_c=rd.matrix(cs, "controller", "A_c", (n_c, n_c)),
            B_c=rd.matrix(cs, "controller", "B_c", (n_c, q)),
            C_c=rd.matrix(cs, "controller", "C_c", (m_c, n_c)),
            D_c=np.zeros((m_c, q)) if D_c is None else D_c,
        )
    except ModelError as exc:
        rd.fail(str(exc), "controller")

    verts_raw = ins.get("vertices", [])
    if not isinstance(verts_raw, list):
        rd.fail("must be a list of matrices", "influence.vertices")
    vertices = tuple(rd.matrix_value(v, f"influence.vertices[{i}]", (m_c, m_a))
                     for i, v in enumerate(verts_raw))
    u_bar = rd.vector(ins, "influence", "u_bar", m_a)
    N = rd.matrix(ins, "influence", "N", (m_a, m_a - m_c), required=False) if m_a > m_c else None
    try:
        influence = InfluenceModel(M_n=rd.matrix(ins, "influence", "M_n", (m_c, m_a)),
                                   u_bar=u_bar, vertices=vertices, N=N)
    except ModelError as exc:
        rd.fail(str(exc), "influence")
    try:
        weights = AllocatorWeights(rd.vector(ws, "weights", "w", m_a))
    except ModelError as exc:
        rd.fail(str(exc), "weights.w")
    xi = rd.vector(ins, "influence", "xi", m_a, required=False)
    xi = np.zeros(m_a) if xi is None else xi
    theta_range = ins.get("theta_range")
    if theta_range is not None:
        if len(vertices) != 2 or not isinstance(theta_range, list) or len(theta_range) != 2 \
                or not theta_range[0] < theta_range[1]:
            rd.fail("needs two vertices and an increasing pair [lo, hi]", "influence.theta_range")
        theta_range = (float(theta_range[0]), float(theta_range[1]))

    try:
        cl = assemble_closed_loop(plant, controller, influence, weights)
    except ModelError as exc:
        msg = str(exc)
        field = "influence.M_n" if msg.startswith("influence") else "weights" if "W, N" in msg else None
        raise ConfigError(msg, field) from None

    dist = None
    ds = rd.section("disturbance", required=False)
    if ds:
        try:
            R = rd.matrix(ds, "disturbance", "R", (max(n_w, 1), max(n_w, 1)))
            dist = DisturbanceClass(R=R, sigma=ds.get("sigma", 1.0))
        except ModelError as exc:
            rd.fail(str(exc), "disturbance")
    synth = dict(rd.section("synthesis", required=False))
    if "trace_selector" in synth and synth["trace_selector"] is not None:
        ts = synth["trace_selector"]
        synth["trace_selector"] = rd.matrix_value(ts, "synthesis.trace_selector",
                                                  (len(ts) if isinstance(ts, list) else 0, cl.n))
    scenario = dict(rd.section("scenario", required=False))
    if "disturbance" in scenario:
        disturbance_from_dict(scenario["disturbance"], max(n_w, 1))
    return ProblemConfig(cl, dist, synth, scenario, theta_range, xi, data)


def load_config(path) -> ProblemConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, None, exc.lineno) from None
    return parse_config(data, text)


def satellite_config(example: str = "disturbed") -> dict:
    """Problem file contents for the two-satellite benchmark."""
    from . import satellite as bm

    plant, ctrl = bm.plant(), bm.controller()
    uncertain = example == "robust"
    infl = bm.influence(uncertain)
    m_a = infl.m_a
    cfg = {
        "units": "thrust mN, mass kg, time s",
        "dimensions": {"n_p": 2, "m_c": 2, "q": 1, "n_c": 2, "m_a": m_a, "n_w": 1},
        "plant": {"A_p": plant.A_p.tolist(), "B_p": plant.B_p.tolist(),
                  "C_p": plant.C_p.tolist(), "B_w": plant.B_w.tolist()},
        "controller": {"A_c": ctrl.A_c.tolist(), "B_c": ctrl.B_c.tolist(),
                       "C_c": ctrl.C_c.tolist(), "D_c": ctrl.D_c.tolist()},
        "influence": {"M_n": infl.M_n.tolist(), "u_bar": infl.u_bar.tolist(),
                      "N": bm.kernel_basis().tolist(), "xi": infl.u_bar.tolist()},
        "weights": {"w": bm.weights().w.tolist()},
        "disturbance": {"R": [[1.0]], "sigma": 1.0},
    }
    n = 2 + 2 + (m_a - 2)
    if uncertain:
        cfg["influence"]["vertices"] = [v.tolist() for v in infl.vertices]
        cfg["influence"]["theta_range"] = list(bm.THETA_RANGE)
        cfg["synthesis"] = {"mode": "robust", "rho": list(bm.RHO_ROBUST)}
        cfg["scenario"] = {"x_p0": bm.X0_ROBUST.tolist(), "t_final": 200.0, "dt": 0.01,
                           "disturbance": {"kind": "zero"}, "theta": [0.9, 0.95, 1.0]}
    else:
        sel = bm.shaped_trace_selector(n)
        cfg["synthesis"] = {"mode": "disturbed", "rho": list(bm.RHO_DISTURBED),
                            "trace_selector": sel.tolist()}
        cfg["scenario"] = {"x_p0": bm.X0_DISTURBED.tolist(), "t_final": 120.0, "dt": 0.01,
                           "disturbance": {"kind": "piecewise-constant",
                                           "breakpoints": [0.0, bm.W_PULSE_END],
                                           "values": [[bm.W_PULSE]]}}
    return cfg
