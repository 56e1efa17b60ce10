"""Monte-Carlo orchestration.

The covariance recursions of every algorithm here are data-independent,
so each algorithm is compiled once per scenario into a *plan* (gains,
trigger decisions, fusion inverses, covariance traces) and each run only
replays the estimate pipeline against a fresh truth realization.  Runs
are independent and may execute on a thread pool; aggregation reduces
per-run arrays in run-index order so results are bit-identical for any
worker count (capped by the ``DKF_THREADS`` environment variable).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import kf_gain_and_cov, stack_observations
from .errors import ValidationError
from .esdkf import (
    EVENT_TRIGGERED,
    TIME_DRIVEN,
    FilterParams,
    NodeState,
    design_mu,
    gain,
    predict,
    resolve_theta,
    trigger_decision,
    updated_bound,
)
from .linalg import spd_inverse
from .quantization import compensate_covariance, dither_quantize_vector, quantize_matrix_plain
from .scenario import ScenarioConfig, Trajectory, simulate_truth

ALGO_KEYS = ("esdkf", "esdkf-et", "ckf", "ceskf", "dsea-cp")

_TAG_TRUTH = 1
_TAG_DITHER = 2


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("DKF_THREADS")
    if requested is None:
        requested = int(cap) if cap else 1
    elif cap:
        requested = min(requested, int(cap))
    return max(1, requested)


def truth_rng(seed: int, run: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, run, _TAG_TRUTH)))


def dither_rng(seed: int, run: int, sensor: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, run, _TAG_DITHER, sensor)))


def _weights_row(digraph, i: int) -> dict[int, float]:
    row = digraph.adjacency[i]
    return {int(j): float(row[j]) for j in np.flatnonzero(row > 0)}


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


@dataclass
class EsdkfStepPlan:
    a_ext: np.ndarray
    h: list[np.ndarray]
    gains: list[np.ndarray | None]
    triggered: np.ndarray  # (N,) bool
    weights: list[dict[int, float]]
    inv_own: list[np.ndarray]
    inv_comp: list[np.ndarray]
    p_fused: list[np.ndarray]


@dataclass
class EsdkfPlan:
    scheme: str
    deltas: np.ndarray
    steps: list[EsdkfStepPlan]
    p: np.ndarray  # (K+1, N, nbar, nbar) fused bounds, row 0 = initial
    triggered: np.ndarray  # (K+1, N) bool

    @property
    def trace_p(self) -> np.ndarray:
        return np.trace(self.p, axis1=2, axis2=3)


def build_esdkf_plan(scenario: ScenarioConfig, scheme: str) -> EsdkfPlan:
    ext = scenario.extended_model()
    fc = scenario.filter
    params = FilterParams(
        theta_mode=fc.theta_mode, theta=fc.theta, theta_bounds=fc.theta_bounds,
        mu_mode=fc.mu_mode, mu=fc.mu, mu_bounds=fc.mu_bounds,
        tau=fc.tau, update_scheme=scheme,
    )
    n_nodes = scenario.n_sensors
    nbar = ext.nbar
    k_max = scenario.horizon
    nodes = [NodeState(i, scenario.initial.x_hat[i].copy(), scenario.initial.p[i].copy())
             for i in range(n_nodes)]
    p_hist = np.empty((k_max + 1, n_nodes, nbar, nbar))
    for i, node in enumerate(nodes):
        p_hist[0, i] = node.p
    trig_hist = np.zeros((k_max + 1, n_nodes), dtype=bool)
    steps: list[EsdkfStepPlan] = []

    for k in range(1, k_max + 1):
        a_ext = ext.a(k - 1)
        q_bar = ext.q_bar(k - 1)
        q_tilde = ext.q_tilde(k - 1)
        digraph = scenario.topology.graphs[scenario.topology.sigma(k)]
        hs, gains, trig = [], [], np.zeros(n_nodes, dtype=bool)
        for i, node in enumerate(nodes):
            h = ext.h(k, i)
            r = np.atleast_2d(ext.base.r(k, i))
            b = np.atleast_2d(ext.base.b_bound(k, i))
            theta = resolve_theta(node, a_ext, q_bar, params)
            predict(node, a_ext, q_bar, q_tilde, theta)
            if params.mu_mode == "fixed":
                mu = params.mu
            else:
                mu = design_mu(node.p_bar, h, r, b, params.mu_bounds)
            ctx = f"sensor {i} time {k}"
            if scheme == EVENT_TRIGGERED and not trigger_decision(
                node.p_bar, h, r, b, mu, params.tau
            ):
                node.x_tilde = node.x_bar
                node.p_tilde = node.p_bar.copy()
                gains.append(None)
            else:
                kg = gain(node.p_bar, h, r, b, mu, context=ctx)
                node.p_tilde = updated_bound(node.p_bar, kg, h, r, b, mu)
                gains.append(kg)
                trig[i] = True
            hs.append(h)
        inv_own, inv_comp = [], []
        for i, node in enumerate(nodes):
            inv_own.append(spd_inverse(node.p_tilde, context=f"own bound sensor {i} k={k}"))
            comp = compensate_covariance(
                quantize_matrix_plain(node.p_tilde, scenario.deltas[i]),
                scenario.deltas[i], nbar,
            )
            inv_comp.append(spd_inverse(comp, context=f"neighbor bound sensor {i} k={k}"))
        weights = [_weights_row(digraph, i) for i in range(n_nodes)]
        p_fused = []
        for i, node in enumerate(nodes):
            omega = np.zeros((nbar, nbar))
            for j, a_ij in weights[i].items():
                omega += a_ij * (inv_own[j] if j == i else inv_comp[j])
            node.p = spd_inverse(omega, context=f"fused information sensor {i} k={k}")
            p_fused.append(node.p)
            p_hist[k, i] = node.p
        trig_hist[k] = trig
        steps.append(EsdkfStepPlan(
            a_ext=a_ext, h=hs, gains=gains, triggered=trig, weights=weights,
            inv_own=inv_own, inv_comp=inv_comp, p_fused=p_fused,
        ))
    return EsdkfPlan(scheme, np.array(scenario.deltas, dtype=float), steps, p_hist, trig_hist)


def run_esdkf_estimates(plan: EsdkfPlan, scenario: ScenarioConfig, truth: Trajectory,
                        rngs: list[np.random.Generator]) -> np.ndarray:
    """Replay one run against a plan; returns estimates (K+1, N, nbar)."""
    n_nodes = scenario.n_sensors
    nbar = scenario.nbar
    k_max = scenario.horizon
    est = np.empty((k_max + 1, n_nodes, nbar))
    x_hat = [scenario.initial.x_hat[i].copy() for i in range(n_nodes)]
    est[0] = np.stack(x_hat)
    for k in range(1, k_max + 1):
        sp = plan.steps[k - 1]
        x_til = []
        for i in range(n_nodes):
            xb = sp.a_ext @ x_hat[i]
            kg = sp.gains[i]
            if kg is None:
                x_til.append(xb)
            else:
                x_til.append(xb + kg @ (truth.y[i][k] - sp.h[i] @ xb))
        x_chk = [
            dither_quantize_vector(x_til[i], plan.deltas[i], rngs[i])
            if plan.deltas[i] > 0 else x_til[i]
            for i in range(n_nodes)
        ]
        new_hat = []
        for i in range(n_nodes):
            zeta = np.zeros(nbar)
            for j, a_ij in sp.weights[i].items():
                if j == i:
                    zeta += a_ij * (sp.inv_own[i] @ x_til[i])
                else:
                    zeta += a_ij * (sp.inv_comp[j] @ x_chk[j])
            new_hat.append(sp.p_fused[i] @ zeta)
        x_hat = new_hat
        est[k] = np.stack(x_hat)
    return est


@dataclass
class CentralPlan:
    a: list[np.ndarray]  # per k
    h: list[np.ndarray]
    gains: list[np.ndarray]
    p: np.ndarray  # (K+1, dim, dim)

    @property
    def trace_p(self) -> np.ndarray:
        return np.trace(self.p, axis1=1, axis2=2)


def build_central_plan(scenario: ScenarioConfig, extended: bool) -> CentralPlan:
    cfg = scenario.baselines["ceskf" if extended else "ckf"]
    model = scenario.extended_model() if extended else scenario.system_model()
    base = model.base if extended else model
    k_max = scenario.horizon
    dim = cfg.p.shape[0]
    p = cfg.p.copy()
    a_list, h_list, g_list = [], [], []
    p_hist = np.empty((k_max + 1, dim, dim))
    p_hist[0] = p
    d = model.d if extended else None
    for k in range(1, k_max + 1):
        h, r = stack_observations(model, k, extended=extended)
        if extended:
            a = model.a(k - 1)
            qh = cfg.q_hat if cfg.q_hat is not None else np.asarray(base.q_hat(k - 1))
            q = model.q_tilde(k - 1) + d @ qh @ d.T
        else:
            a = np.asarray(base.a_bar(k - 1), dtype=float)
            q = np.asarray(base.q(k - 1), dtype=float)
        kg, p = kf_gain_and_cov(p, a, q, h, r, context=f"central k={k}")
        a_list.append(a)
        h_list.append(h)
        g_list.append(kg)
        p_hist[k] = p
    return CentralPlan(a_list, h_list, g_list, p_hist)


def run_central_estimates(plan: CentralPlan, scenario: ScenarioConfig, truth: Trajectory,
                          extended: bool) -> np.ndarray:
    cfg = scenario.baselines["ceskf" if extended else "ckf"]
    k_max = scenario.horizon
    x = cfg.x_hat.copy()
    est = np.empty((k_max + 1, x.size))
    est[0] = x
    for k in range(1, k_max + 1):
        y = np.concatenate([truth.y[i][k] for i in range(scenario.n_sensors)])
        xb = plan.a[k - 1] @ x
        x = xb + plan.gains[k - 1] @ (y - plan.h[k - 1] @ xb)
        est[k] = x
    return est


@dataclass
class DseaPlan:
    a: list[np.ndarray]
    omega_bar: list[list[np.ndarray]]  # per k, per node
    h_gain: list[list[np.ndarray]]  # per k, per node: H^T R^{-1}
    weights: list[list[dict[int, float]]]
    p_hat: np.ndarray  # (K+1, N, n, n) post-consensus covariance
    iterations: int

    @property
    def trace_p(self) -> np.ndarray:
        return np.trace(self.p_hat, axis1=2, axis2=3)


def build_dsea_plan(scenario: ScenarioConfig) -> DseaPlan:
    cfg = scenario.baselines["dsea_cp"]
    model = scenario.system_model()
    n = model.n
    n_nodes = scenario.n_sensors
    k_max = scenario.horizon
    omegas = [spd_inverse(cfg.p, context="dsea init") for _ in range(n_nodes)]
    p_hat = np.empty((k_max + 1, n_nodes, n, n))
    p_hat[0] = cfg.p
    a_list, ob_list, hg_list, w_list = [], [], [], []
    for k in range(1, k_max + 1):
        a = np.asarray(model.a_bar(k - 1), dtype=float)
        q = np.asarray(model.q(k - 1), dtype=float)
        digraph = scenario.topology.graphs[scenario.topology.sigma(k)]
        weights = [_weights_row(digraph, i) for i in range(n_nodes)]
        obs, hgs, posts = [], [], []
        for i in range(n_nodes):
            p_prev = spd_inverse(omegas[i], context=f"dsea node {i} k={k}")
            p_bar = a @ p_prev @ a.T + q
            omega_bar = spd_inverse(p_bar, context=f"dsea prediction node {i} k={k}")
            h = np.atleast_2d(np.asarray(model.h_bar(k, i), dtype=float))
            r_inv = spd_inverse(np.atleast_2d(model.r(k, i)), context=f"dsea R node {i}")
            hg = h.T @ r_inv
            posts.append(omega_bar + hg @ h)
            obs.append(omega_bar)
            hgs.append(hg)
        for _ in range(cfg.consensus_iterations):
            posts = [
                sum(w * posts[j] for j, w in weights[i].items())
                for i in range(n_nodes)
            ]
        omegas = posts
        for i in range(n_nodes):
            p_hat[k, i] = spd_inverse(omegas[i], context=f"dsea posterior node {i} k={k}")
        a_list.append(a)
        ob_list.append(obs)
        hg_list.append(hgs)
        w_list.append(weights)
    return DseaPlan(a_list, ob_list, hg_list, w_list, p_hat, cfg.consensus_iterations)


def run_dsea_estimates(plan: DseaPlan, scenario: ScenarioConfig, truth: Trajectory) -> np.ndarray:
    cfg = scenario.baselines["dsea_cp"]
    n_nodes = scenario.n_sensors
    n = cfg.x_hat.size
    k_max = scenario.horizon
    est = np.empty((k_max + 1, n_nodes, n))
    xs = [cfg.x_hat.copy() for _ in range(n_nodes)]
    est[0] = np.stack(xs)
    for k in range(1, k_max + 1):
        qs = []
        for i in range(n_nodes):
            qs.append(
                plan.omega_bar[k - 1][i] @ (plan.a[k - 1] @ xs[i])
                + plan.h_gain[k - 1][i] @ truth.y[i][k]
            )
        for _ in range(plan.iterations):
            qs = [
                sum(w * qs[j] for j, w in plan.weights[k - 1][i].items())
                for i in range(n_nodes)
            ]
        xs = [plan.p_hat[k, i] @ qs[i] for i in range(n_nodes)]
        est[k] = np.stack(xs)
    return est


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsSeries:
    algo: str
    runs: int
    k: np.ndarray
    rmse: dict[str, np.ndarray]
    me: np.ndarray
    mean_trace_p: np.ndarray
    triggers: np.ndarray  # (K, N) counts across runs

    @property
    def horizon(self) -> int:
        return len(self.k)


@dataclass
class AlgoResult:
    name: str
    series: MetricsSeries
    plan: object
    ext_sq: np.ndarray | None = None  # (runs, K+1, N) extended-state squared errors
    raw_err: np.ndarray | None = None  # (runs, K+1, N_eff, n) signed state errors
    estimates: np.ndarray | None = None  # (runs, K+1, N_eff, dim)


@dataclass
class _RunOutput:
    pos_sq: np.ndarray  # (K+1, N_eff)
    vel_sq: np.ndarray | None
    comp_mean: np.ndarray  # (K+1, N_eff)
    ext_sq: np.ndarray | None
    err: np.ndarray | None
    est: np.ndarray | None


def _groups(scenario: ScenarioConfig):
    if scenario.component_groups:
        return {name: np.asarray(idx, dtype=int)
                for name, idx in scenario.component_groups.items()}
    return {"state": np.arange(scenario.model.n)}


def _collect(scenario: ScenarioConfig, truth: Trajectory, est: np.ndarray,
             extended_dim: bool, keep_err: bool) -> _RunOutput:
    keep_est = keep_err
    n = scenario.model.n
    if est.ndim == 2:  # centralized: one estimator
        est = est[:, None, :]
    x_est = est[:, :, :n]
    err = truth.x[:, None, :] - x_est  # (K+1, N_eff, n)
    groups = _groups(scenario)
    sq = {name: np.sum(err[:, :, idx] ** 2, axis=2) for name, idx in groups.items()}
    names = list(groups)
    pos_sq = sq[names[0]]
    vel_sq = sq[names[1]] if len(names) > 1 else None
    comp_mean = err.mean(axis=2)
    ext_sq = None
    if extended_dim:
        x_true = np.concatenate([truth.x, truth.f], axis=1)
        eext = x_true[:, None, :] - est
        ext_sq = np.sum(eext ** 2, axis=2)
    return _RunOutput(pos_sq, vel_sq, comp_mean, ext_sq,
                      err if keep_err else None, est if keep_est else None)


def _aggregate(scenario: ScenarioConfig, name: str, outputs: list[_RunOutput],
               plan, trig_counts: np.ndarray) -> AlgoResult:
    runs = len(outputs)
    k_idx = np.arange(1, scenario.horizon + 1)
    groups = list(_groups(scenario))
    pos = np.stack([o.pos_sq for o in outputs])  # (runs, K+1, N_eff)
    rmse = {groups[0]: np.sqrt(pos.mean(axis=0).mean(axis=1))[1:]}
    if outputs[0].vel_sq is not None:
        vel = np.stack([o.vel_sq for o in outputs])
        rmse[groups[1]] = np.sqrt(vel.mean(axis=0).mean(axis=1))[1:]
    comp = np.stack([o.comp_mean for o in outputs])
    me = comp.mean(axis=0).mean(axis=1)[1:]
    trace = plan.trace_p
    if trace.ndim == 1:
        mean_trace = trace[1:]
    else:
        mean_trace = trace.mean(axis=1)[1:]
    series = MetricsSeries(
        algo=name, runs=runs, k=k_idx, rmse=rmse, me=me,
        mean_trace_p=mean_trace, triggers=trig_counts,
    )
    ext_sq = None
    if outputs[0].ext_sq is not None:
        ext_sq = np.stack([o.ext_sq for o in outputs])
    raw = None
    est = None
    if outputs[0].err is not None:
        raw = np.stack([o.err for o in outputs])
        est = np.stack([o.est for o in outputs])
    return AlgoResult(name, series, plan, ext_sq, raw, est)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def build_plan(scenario: ScenarioConfig, algo: str):
    if algo == "esdkf":
        return build_esdkf_plan(scenario, TIME_DRIVEN)
    if algo == "esdkf-et":
        return build_esdkf_plan(scenario, EVENT_TRIGGERED)
    if algo == "ckf":
        return build_central_plan(scenario, extended=False)
    if algo == "ceskf":
        return build_central_plan(scenario, extended=True)
    if algo == "dsea-cp":
        return build_dsea_plan(scenario)
    raise ValidationError(f"unknown algorithm {algo!r}, expected one of {ALGO_KEYS}")


def run_monte_carlo(scenario: ScenarioConfig, algorithms: list[str],
                    runs: int | None = None, seed: int | None = None,
                    threads: int | None = None, keep_raw: bool = False,
                    truth_hook=None) -> dict[str, AlgoResult]:
    """Execute `runs` independent realizations, feeding every algorithm
    the identical observation streams, and aggregate the metric series.

    ``truth_hook`` (tests only) may replace the simulated trajectory.
    """
    runs = scenario.monte_carlo.runs if runs is None else int(runs)
    seed = scenario.monte_carlo.seed if seed is None else int(seed)
    if runs < 1:
        raise ValidationError("runs must be >= 1")
    for a in algorithms:
        if a not in ALGO_KEYS:
            raise ValidationError(f"unknown algorithm {a!r}, expected one of {ALGO_KEYS}")
    plans = {a: build_plan(scenario, a) for a in algorithms}

    def one_run(r: int) -> dict[str, _RunOutput]:
        truth = simulate_truth(scenario, truth_rng(seed, r))
        if truth_hook is not None:
            truth = truth_hook(truth, r)
        out: dict[str, _RunOutput] = {}
        for a in algorithms:
            plan = plans[a]
            if a in ("esdkf", "esdkf-et"):
                rngs = [dither_rng(seed, r, i) for i in range(scenario.n_sensors)]
                est = run_esdkf_estimates(plan, scenario, truth, rngs)
                out[a] = _collect(scenario, truth, est, True, keep_raw)
            elif a in ("ckf", "ceskf"):
                est = run_central_estimates(plan, scenario, truth, extended=(a == "ceskf"))
                out[a] = _collect(scenario, truth, est, False, keep_raw)
            else:
                est = run_dsea_estimates(plan, scenario, truth)
                out[a] = _collect(scenario, truth, est, False, keep_raw)
        return out

    workers = worker_count(threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_run = list(pool.map(one_run, range(runs)))
    else:
        per_run = [one_run(r) for r in range(runs)]

    results = {}
    for a in algorithms:
        plan = plans[a]
        if a in ("esdkf", "esdkf-et"):
            trig = plan.triggered[1:].astype(int) * runs
        else:
            trig = np.zeros((scenario.horizon, scenario.n_sensors), dtype=int)
        results[a] = _aggregate(scenario, a, [pr[a] for pr in per_run], plan, trig)
    return results
