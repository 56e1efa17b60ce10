"""Scenario configuration, presets, and ground-truth simulation.

A scenario is a JSON-compatible document: matrices as row-major nested
lists, switching signals and generators as restricted expressions (see
:mod:`dkf.expr`).  The bundled presets reproduce the three experiment
families used by the acceptance suite: a 4-sensor tracking setup with
switching observation roles (``sec61``), its decaying / persistent
observation-bias variants (``sec62_situation1``, ``sec62_situation2``),
and a 20-node network with periodically singular dynamics and three node
kinds (``sec63``).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .expr import CompiledExpr, compile_expr
from .model import ExtendedModel, SystemModel, build_extended_model
from .topology import Digraph, TopologySchedule

PRESET_NAMES = ("sec61", "sec62_situation1", "sec62_situation2", "sec63")


def _matrix(value, name: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} is not a numeric matrix") from exc
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


class MatrixSchedule:
    """A constant matrix or a bank of matrices with a 1-based selector
    expression in k (and the 1-based sensor index i for observation
    banks)."""

    def __init__(self, spec, name: str):
        self.name = name
        if isinstance(spec, dict):
            self.mats = [_matrix(m, f"{name}[{s}]") for s, m in enumerate(spec["matrices"])]
            self.select: CompiledExpr | None = compile_expr(spec["select"])
            if any(m.shape != self.mats[0].shape for m in self.mats):
                raise ValidationError(f"{name}: bank matrices must share one shape")
        else:
            self.mats = [_matrix(spec, name)]
            self.select = None

    @property
    def shape(self):
        return self.mats[0].shape

    def at(self, k: int, i: int | None = None) -> np.ndarray:
        if self.select is None:
            return self.mats[0]
        env = {"k": k}
        if i is not None:
            env["i"] = i + 1
        idx = int(round(self.select(**env))) - 1
        if not 0 <= idx < len(self.mats):
            raise ValidationError(
                f"{self.name}: selector produced index {idx + 1}, bank has {len(self.mats)}"
            )
        return self.mats[idx]


class ScalarOrMatrix:
    """Per-sensor noise bound: scalar, matrix, or scalar expression in k,
    broadcast onto m x m."""

    def __init__(self, spec, m: int, name: str):
        self.name = name
        self.m = m
        self.expr: CompiledExpr | None = None
        self.mat: np.ndarray | None = None
        if isinstance(spec, str):
            self.expr = compile_expr(spec)
        elif np.isscalar(spec):
            self.mat = float(spec) * np.eye(m)
        else:
            self.mat = _matrix(spec, name)
            if self.mat.shape != (m, m):
                raise ValidationError(f"{name} must be {m}x{m}, got {self.mat.shape}")

    def at(self, k: int) -> np.ndarray:
        if self.expr is not None:
            return float(self.expr(k=k)) * np.eye(self.m)
        return self.mat


def _per_sensor(spec, n_sensors: int) -> list:
    """Normalize a shared-or-per-sensor spec to one entry per sensor.

    A list is per-sensor when its length matches and every entry is
    itself a complete spec (scalar, expression string, dict, or nested
    matrix); a plain 2-D matrix is shared.
    """
    if isinstance(spec, list):
        def _is_entry(e):
            return (
                isinstance(e, (str, dict))
                or np.isscalar(e)
                or (isinstance(e, list) and e and isinstance(e[0], list))
            )

        if len(spec) == n_sensors and all(_is_entry(e) for e in spec):
            return list(spec)
    return [copy.deepcopy(spec) for _ in range(n_sensors)]


@dataclass
class ModelConfig:
    n: int
    p: int
    n_sensors: int
    a_bar: MatrixSchedule
    g_bar: MatrixSchedule
    h_banks: list[MatrixSchedule]  # one per sensor (shared banks duplicated)
    q: MatrixSchedule
    q_hat: MatrixSchedule
    r: list[ScalarOrMatrix]
    b_bound: list[ScalarOrMatrix]
    f_exprs: list[CompiledExpr]
    bias_exprs: list[list[CompiledExpr]]  # per sensor, per observation component
    b0_ranges: list[tuple[float, float]]

    @property
    def m(self) -> list[int]:
        return [bank.shape[0] for bank in self.h_banks]

    def h_bar(self, k: int, i: int) -> np.ndarray:
        return self.h_banks[i].at(k, i)

    def _state_env(self, x: np.ndarray, k: int) -> dict:
        env = {"k": k}
        for j, v in enumerate(x):
            env[f"x{j + 1}"] = float(v)
        return env

    def f_value(self, x: np.ndarray, k: int) -> np.ndarray:
        env = self._state_env(x, k)
        return np.array([e(**env) for e in self.f_exprs])

    def bias_value(self, x: np.ndarray, k: int, i: int, b0: float) -> np.ndarray:
        env = self._state_env(x, k)
        env["b0"] = float(b0)
        env["i"] = i + 1
        return np.array([e(**env) for e in self.bias_exprs[i]])


@dataclass
class TopologyConfig:
    graphs: list[Digraph]
    sigma_expr: CompiledExpr | None  # 1-based graph index
    sigma_list: list[int] | None  # 1-based, explicit per-k indices
    interval_length: int | None = None

    def sigma(self, k: int) -> int:
        if self.sigma_list is not None:
            if not 0 <= k < len(self.sigma_list):
                raise ValidationError(f"sigma list does not cover time {k}")
            return self.sigma_list[k] - 1
        return int(round(self.sigma_expr(k=k))) - 1

    def schedule(self, horizon: int) -> TopologySchedule:
        intervals = None
        if self.interval_length:
            intervals = list(range(0, horizon + self.interval_length, self.interval_length))
        return TopologySchedule(self.graphs, self.sigma, intervals)


@dataclass
class InitialConfig:
    x_hat: list[np.ndarray]  # per sensor, extended dimension
    p: list[np.ndarray]  # per sensor
    x0_mean: np.ndarray
    x0_cov: np.ndarray


@dataclass
class MonteCarloConfig:
    runs: int = 100
    seed: int = 1234


@dataclass
class FilterConfig:
    mu: float = 0.3
    mu_mode: str = "fixed"
    mu_bounds: tuple[float, float] = (1e-3, 1e3)
    theta_mode: str = "closed_form"
    theta: float = 1.0
    theta_bounds: tuple[float, float] = (1e-6, 1e6)
    tau: float = 0.001


@dataclass
class BaselineConfig:
    x_hat: np.ndarray
    p: np.ndarray
    q_hat: np.ndarray | None = None  # CESKF tuning
    consensus_iterations: int = 1  # DSEA-CP sweeps per step


@dataclass
class ValidationConfig:
    alpha: float = 1.0
    nbar: int = 10
    at_k: int = 0
    lss_window: int = 8
    lss_beta: float = 1e-8


@dataclass
class ScenarioConfig:
    name: str
    horizon: int
    model: ModelConfig
    topology: TopologyConfig
    deltas: np.ndarray  # per-sensor quantization step, 0 = disabled
    filter: FilterConfig
    monte_carlo: MonteCarloConfig
    initial: InitialConfig
    baselines: dict[str, BaselineConfig]
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    component_groups: dict[str, list[int]] | None = None  # e.g. pos/vel split

    @property
    def n_sensors(self) -> int:
        return self.model.n_sensors

    @property
    def nbar(self) -> int:
        return self.model.n + self.model.p

    def system_model(self) -> SystemModel:
        mc = self.model

        def bias_sampler(x, k, i, rng):
            lo, hi = mc.b0_ranges[i]
            return mc.bias_value(x, k, i, rng.uniform(lo, hi))

        return SystemModel(
            n=mc.n, p=mc.p, m=mc.m,
            a_bar=lambda k: mc.a_bar.at(k),
            g_bar=lambda k: mc.g_bar.at(k),
            h_bar=mc.h_bar,
            q=lambda k: mc.q.at(k),
            r=lambda k, i: mc.r[i].at(k),
            b_bound=lambda k, i: mc.b_bound[i].at(k),
            q_hat=lambda k: mc.q_hat.at(k),
            f=mc.f_value,
            bias=bias_sampler,
        )

    def extended_model(self) -> ExtendedModel:
        return build_extended_model(self.system_model())

    def with_overrides(self, *, horizon=None, tau=None, delta=None, runs=None,
                       seed=None, update_scheme=None) -> "ScenarioConfig":
        out = replace(self)
        if horizon is not None:
            out = replace(out, horizon=int(horizon))
        if tau is not None:
            out = replace(out, filter=replace(out.filter, tau=float(tau)))
        if delta is not None:
            out = replace(out, deltas=np.full(self.n_sensors, float(delta)))
        if runs is not None or seed is not None:
            mc = replace(
                out.monte_carlo,
                runs=out.monte_carlo.runs if runs is None else int(runs),
                seed=out.monte_carlo.seed if seed is None else int(seed),
            )
            out = replace(out, monte_carlo=mc)
        return out


def load_scenario(doc: dict | str | Path) -> ScenarioConfig:
    """Build a validated ScenarioConfig from a JSON document, a path to
    one, or a preset name."""
    if isinstance(doc, (str, Path)):
        if isinstance(doc, str) and doc in PRESET_NAMES:
            doc = preset_document(doc)
        else:
            path = Path(doc)
            if not path.exists():
                raise ValidationError(
                    f"scenario {doc!r} is neither a preset {PRESET_NAMES} nor a file"
                )
            doc = json.loads(path.read_text())
    return _load_dict(doc)


def _load_dict(doc: dict) -> ScenarioConfig:
    try:
        m = doc["model"]
        n = int(m["n"])
        p = int(m["p"])
        n_sensors = int(m["num_sensors"])
    except KeyError as exc:
        raise ValidationError(f"scenario missing field {exc}") from exc

    h_spec = m["H_bar"]
    if isinstance(h_spec, dict):
        banks = [MatrixSchedule(h_spec, "H_bar") for _ in range(n_sensors)]
    else:
        banks = [MatrixSchedule(s, f"H_bar[sensor {i}]") for i, s in enumerate(h_spec)]
        if len(banks) != n_sensors:
            raise ValidationError(
                f"H_bar lists {len(banks)} sensors, topology has {n_sensors}"
            )
    ms = [b.shape[0] for b in banks]

    bias_spec = _per_sensor(m.get("bias", "0"), n_sensors)
    bias_exprs = []
    for i, spec in enumerate(bias_spec):
        comps = spec if isinstance(spec, list) else [spec]
        if len(comps) == 1 and ms[i] > 1:
            comps = comps * ms[i]
        if len(comps) != ms[i]:
            raise ValidationError(
                f"bias for sensor {i} has {len(comps)} components, observation is {ms[i]}-dim"
            )
        bias_exprs.append([compile_expr(c) for c in comps])

    b0_spec = m.get("b0_range", [0.0, 0.0])
    if b0_spec and isinstance(b0_spec[0], (list, tuple)):
        b0_ranges = [tuple(map(float, r)) for r in b0_spec]
    else:
        b0_ranges = [tuple(map(float, b0_spec))] * n_sensors

    model = ModelConfig(
        n=n, p=p, n_sensors=n_sensors,
        a_bar=MatrixSchedule(m["A_bar"], "A_bar"),
        g_bar=MatrixSchedule(m["G_bar"], "G_bar"),
        h_banks=banks,
        q=MatrixSchedule(m["Q"], "Q"),
        q_hat=MatrixSchedule(m["Q_hat"], "Q_hat"),
        r=[ScalarOrMatrix(s, ms[i], f"R[sensor {i}]")
           for i, s in enumerate(_per_sensor(m["R"], n_sensors))],
        b_bound=[ScalarOrMatrix(s, ms[i], f"B[sensor {i}]")
                 for i, s in enumerate(_per_sensor(m.get("B", 0.0), n_sensors))],
        f_exprs=[compile_expr(e) for e in m.get("f", ["0"] * p)],
        bias_exprs=bias_exprs,
        b0_ranges=b0_ranges,
    )
    if len(model.f_exprs) != p:
        raise ValidationError(f"f has {len(model.f_exprs)} components, p = {p}")

    t = doc["topology"]
    graphs = [Digraph(_matrix(a, f"adjacency[{s}]")) for s, a in enumerate(t["adjacency"])]
    if any(g.n_nodes != n_sensors for g in graphs):
        raise ValidationError("adjacency size must equal the sensor count")
    sigma = t.get("sigma", 1)
    if isinstance(sigma, list):
        topo = TopologyConfig(graphs, None, [int(s) for s in sigma],
                              t.get("interval_length"))
    else:
        topo = TopologyConfig(graphs, compile_expr(sigma), None, t.get("interval_length"))

    q_spec = doc.get("quantizer", {})
    delta = q_spec.get("delta", 0.0)
    deltas = np.asarray(
        delta if isinstance(delta, list) else [delta] * n_sensors, dtype=float
    )
    if deltas.size != n_sensors or np.any(deltas < 0):
        raise ValidationError("quantizer.delta must be a nonnegative scalar or per-sensor list")

    fspec = doc.get("filter", {})
    filt = FilterConfig(
        mu=float(fspec.get("mu", 0.3)),
        mu_mode=fspec.get("mu_mode", "fixed"),
        mu_bounds=tuple(fspec.get("mu_bounds", (1e-3, 1e3))),
        theta_mode=fspec.get("theta_mode", "closed_form"),
        theta=float(fspec.get("theta", 1.0)),
        theta_bounds=tuple(fspec.get("theta_bounds", (1e-6, 1e6))),
        tau=float(fspec.get("tau", 0.001)),
    )
    if filt.tau < 0:
        raise ValidationError(f"trigger threshold must be >= 0, got {filt.tau}")

    ini = doc["initial"]
    nbar = n + p
    x_hat_spec = ini.get("x_hat", [0.0] * nbar)
    if x_hat_spec and isinstance(x_hat_spec[0], (list, tuple)):
        x_hats = [np.asarray(v, dtype=float) for v in x_hat_spec]
    else:
        x_hats = [np.asarray(x_hat_spec, dtype=float)] * n_sensors
    p_spec = ini["p"]
    if isinstance(p_spec[0][0], (list, tuple)):
        p0s = [_matrix(v, "initial.p") for v in p_spec]
    else:
        p0s = [_matrix(p_spec, "initial.p")] * n_sensors
    for arr in x_hats:
        if arr.shape != (nbar,):
            raise ValidationError(f"initial.x_hat must have length {nbar}")
    for arr in p0s:
        if arr.shape != (nbar, nbar):
            raise ValidationError(f"initial.p must be {nbar}x{nbar}")
    initial = InitialConfig(
        x_hat=list(x_hats), p=list(p0s),
        x0_mean=np.asarray(ini.get("x0_mean", [0.0] * n), dtype=float),
        x0_cov=_matrix(ini["x0_cov"], "initial.x0_cov"),
    )

    mc_spec = doc.get("monte_carlo", {})
    mc = MonteCarloConfig(int(mc_spec.get("runs", 100)), int(mc_spec.get("seed", 1234)))
    if mc.runs < 1:
        raise ValidationError("monte_carlo.runs must be >= 1")

    bspec = doc.get("baselines", {})
    baselines = {}
    ck = bspec.get("ckf", {})
    baselines["ckf"] = BaselineConfig(
        x_hat=np.asarray(ck.get("x_hat", [0.0] * n), dtype=float),
        p=_matrix(ck.get("p", initial.x0_cov), "baselines.ckf.p"),
    )
    ce = bspec.get("ceskf", {})
    baselines["ceskf"] = BaselineConfig(
        x_hat=np.asarray(ce.get("x_hat", [0.0] * nbar), dtype=float),
        p=_matrix(ce.get("p", p0s[0]), "baselines.ceskf.p"),
        q_hat=_matrix(ce["q_hat"], "baselines.ceskf.q_hat") if "q_hat" in ce else None,
    )
    ds = bspec.get("dsea_cp", {})
    baselines["dsea_cp"] = BaselineConfig(
        x_hat=np.asarray(ds.get("x_hat", [0.0] * n), dtype=float),
        p=_matrix(ds.get("p", initial.x0_cov), "baselines.dsea_cp.p"),
        consensus_iterations=int(ds.get("consensus_iterations", 1)),
    )

    vspec = doc.get("validation", {})
    validation = ValidationConfig(
        alpha=float(vspec.get("alpha", 1.0)),
        nbar=int(vspec.get("nbar", 10)),
        at_k=int(vspec.get("at_k", 0)),
        lss_window=int(vspec.get("lss_window", 8)),
        lss_beta=float(vspec.get("lss_beta", 1e-8)),
    )

    groups = doc.get("component_groups")
    if groups is not None:
        groups = {k: [int(j) for j in v] for k, v in groups.items()}

    scenario = ScenarioConfig(
        name=doc.get("name", "scenario"),
        horizon=int(doc.get("horizon", 100)),
        model=model,
        topology=topo,
        deltas=deltas,
        filter=filt,
        monte_carlo=mc,
        initial=initial,
        baselines=baselines,
        validation=validation,
        component_groups=groups,
    )
    # surface dimension mismatches at load time
    scenario.system_model().validate_dimensions()
    return scenario


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

_T = 0.1
_A_KIN = [
    [1, 0, _T, 0],
    [0, 1, 0, _T],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
]
_A_SINGULAR = [
    [1, 0, _T, 0],
    [0, 1, 0, _T],
    [0, 0, 1, 0],
    [0, 0, 1, 0],
]
_G_KIN = [[0, 0], [0, 0], [_T, 0], [0, _T]]
_Q_KIN = [[4, 0, 0, 0], [0, 4, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]
_P0 = [[10, 0, 0, 0], [0, 10, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]
_QHAT = [[1e-3, 0], [0, 1e-3]]

_ADJ_4 = [
    [[1, 0, 0, 0], [0.5, 0.5, 0, 0], [0, 0.5, 0.5, 0], [0, 0, 0.5, 0.5]],
    [[0.5, 0.5, 0, 0], [0, 1, 0, 0], [0, 0.3, 0.4, 0.3], [0, 0.5, 0, 0.5]],
    [[0.5, 0.5, 0, 0], [0, 0.5, 0.5, 0], [0, 0, 1, 0], [0.25, 0.25, 0.25, 0.25]],
]

_H_BANK_4 = [[[1, 0, 0, 0]], [[0, 1, 0, 0]], [[0, 0, 0, 0]], [[0, 0, 0, 0]]]


def _blockdiag(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]))
    out[: a.shape[0], : a.shape[1]] = a
    out[a.shape[0] :, a.shape[1] :] = b
    return out.tolist()


def _sec61_document() -> dict:
    return {
        "name": "sec61",
        "horizon": 300,
        "model": {
            "n": 4, "p": 2, "num_sensors": 4,
            "A_bar": _A_KIN,
            "G_bar": _G_KIN,
            "Q": _Q_KIN,
            "Q_hat": _QHAT,
            "H_bar": {"matrices": _H_BANK_4, "select": "mod(i + floor(k/10), 4) + 1"},
            "R": 4.0,
            "B": 4.0,
            "f": ["(sin(x3) + k)/3", "(sin(x4) + k)/3"],
            "bias": "sat(2*sin(x1**2 + x2**2) + b0, 2)",
            "b0_range": [-2, 2],
        },
        "topology": {
            "adjacency": _ADJ_4,
            "sigma": "mod(floor(k/5), 3) + 1",
            "interval_length": 15,
        },
        "quantizer": {"delta": 0.0},
        "filter": {"mu": 0.3, "tau": 0.001},
        "initial": {
            "x_hat": [0, 0, 0, 0, 0, 0],
            "p": _blockdiag(_P0, np.eye(2)),
            "x0_mean": [0, 0, 0, 0],
            "x0_cov": _P0,
        },
        "monte_carlo": {"runs": 100, "seed": 1234},
        "validation": {"alpha": 0.2, "nbar": 80},
        "component_groups": {"pos": [0, 1], "vel": [2, 3]},
    }


def _sec62_document(situation: int) -> dict:
    decaying_bias = "sat(2*sin(x1**2 + x2**2) + b0, 2)/max(k, 1)"
    decaying_b = "4/max(k, 1)**2"
    doc = _sec61_document()
    doc["name"] = f"sec62_situation{situation}"
    doc["horizon"] = 1000
    doc["model"]["f"] = [
        "sin(x3)/(2*max(k, 1)) + 1",
        "sin(x4)/(2*max(k, 1)) + 1",
    ]
    doc["model"]["H_bar"] = [
        [[1, 0, 0, 0]], [[0, 1, 0, 0]], [[1, 0, 0, 0]], [[0, 1, 0, 0]],
    ]
    if situation == 1:
        doc["model"]["bias"] = decaying_bias
        doc["model"]["B"] = decaying_b
        doc["model"]["b0_range"] = [-2, 2]
    else:
        big = "sat(40*sin(x1**2 + x2**2) + b0, 40)"
        doc["model"]["bias"] = [decaying_bias, decaying_bias, big, big]
        doc["model"]["B"] = [decaying_b, decaying_b, 1600.0, 1600.0]
        doc["model"]["b0_range"] = [[-2, 2], [-2, 2], [-40, 40], [-40, 40]]
    root10 = math.sqrt(10.0)
    doc["initial"]["x_hat"] = [-10, -10, -root10, -root10, 0, 0]
    doc["initial"]["p"] = _blockdiag(11 * np.asarray(_P0), np.eye(2))
    doc["validation"] = {"alpha": 0.5, "nbar": 80}
    return doc


def _sec63_document() -> dict:
    n_nodes = 20
    # three node kinds around a ring: x1 observers, x2 observers, and
    # relay-only nodes with a zero observation matrix (y unused)
    h_list = []
    for i in range(n_nodes):
        if i % 5 in (0, 2):
            h_list.append([[1, 0, 0, 0]])
        elif i % 5 in (1, 3):
            h_list.append([[0, 1, 0, 0]])
        else:
            h_list.append([[0, 0, 0, 0]])

    def ring(stride: int) -> list[list[float]]:
        a = np.zeros((n_nodes, n_nodes))
        for i in range(n_nodes):
            for j in {i, (i + stride) % n_nodes, (i - stride) % n_nodes}:
                a[i, j] = 1.0
        return (a / a.sum(axis=1, keepdims=True)).tolist()

    doc = _sec61_document()
    doc["name"] = "sec63"
    doc["horizon"] = 500
    doc["model"]["num_sensors"] = n_nodes
    doc["model"]["A_bar"] = {
        "matrices": [_A_KIN, _A_SINGULAR],
        "select": "min(floor(mod(k, 10)/8), 1) + 1",
    }
    doc["model"]["H_bar"] = h_list
    doc["topology"] = {
        "adjacency": [ring(1), ring(3)],
        "sigma": "mod(floor(k/5), 2) + 1",
        "interval_length": 10,
    }
    doc["monte_carlo"] = {"runs": 50, "seed": 1234}
    doc["baselines"] = {
        "ckf": {"x_hat": [0, 0, 0, 0], "p": _P0},
        "ceskf": {
            "x_hat": [0, 0, 0, 0, 0, 0],
            "p": _blockdiag(_P0, np.eye(2)),
            "q_hat": [[1, 0], [0, 1]],
        },
        "dsea_cp": {"x_hat": [0, 0, 0, 0], "p": _P0, "consensus_iterations": 1},
    }
    doc["validation"] = {"alpha": 0.5, "nbar": 80, "lss_window": 8, "lss_beta": 1e-6}
    return doc


def preset_document(name: str) -> dict:
    """A deep copy so callers may freely mutate the returned document."""
    if name == "sec61":
        doc = _sec61_document()
    elif name == "sec62_situation1":
        doc = _sec62_document(1)
    elif name == "sec62_situation2":
        doc = _sec62_document(2)
    elif name == "sec63":
        doc = _sec63_document()
    else:
        raise ValidationError(f"unknown preset {name!r}, expected one of {PRESET_NAMES}")
    return copy.deepcopy(doc)


def preset(name: str) -> ScenarioConfig:
    return load_scenario(preset_document(name))


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """A factor L with L L^T = cov; tolerates semidefinite inputs."""
    cov = np.asarray(cov, dtype=float)
    if not cov.any():
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
        return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))


@dataclass
class Trajectory:
    """One realization of the true system and its observations."""

    x: np.ndarray  # (K+1, n)
    f: np.ndarray  # (K+1, p)
    y: list[np.ndarray]  # per sensor, (K+1, m_i)
    b: list[np.ndarray]  # per sensor, (K+1, m_i)
    b0: np.ndarray  # per sensor initial bias seed

    def extended(self, k: int) -> np.ndarray:
        return np.concatenate([self.x[k], self.f[k]])


def simulate_truth(scenario: ScenarioConfig, rng: np.random.Generator) -> Trajectory:
    """Roll the true system forward over the configured horizon.

    Draw order is fixed (x0, per-sensor b0, then per step: per-sensor
    observation noise, process noise) so a given generator state always
    produces the same trajectory.
    """
    mc = scenario.model
    k_max = scenario.horizon
    n, p = mc.n, mc.p
    x = np.empty((k_max + 1, n))
    f = np.empty((k_max + 1, p))
    ys = [np.empty((k_max + 1, m)) for m in mc.m]
    bs = [np.empty((k_max + 1, m)) for m in mc.m]

    chol_x0 = _psd_factor(scenario.initial.x0_cov)
    x[0] = scenario.initial.x0_mean + chol_x0 @ rng.standard_normal(n)
    b0 = np.array([rng.uniform(lo, hi) for lo, hi in mc.b0_ranges])

    for k in range(k_max + 1):
        f[k] = mc.f_value(x[k], k) if p else np.zeros(0)
        for i in range(mc.n_sensors):
            h = mc.h_bar(k, i)
            bias = mc.bias_value(x[k], k, i, b0[i])
            r = mc.r[i].at(k)
            noise = _psd_factor(r) @ rng.standard_normal(mc.m[i])
            bs[i][k] = bias
            ys[i][k] = h @ x[k] + bias + noise
        if k < k_max:
            q = mc.q.at(k)
            w = _psd_factor(q) @ rng.standard_normal(n)
            gf = mc.g_bar.at(k) @ f[k] if p else np.zeros(n)
            x[k + 1] = mc.a_bar.at(k) @ x[k] + gf + w
    return Trajectory(x, f, ys, bs, b0)
