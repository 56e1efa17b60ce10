"""Scenario-level assumption report.

Structural conditions (bound positivity, boundedness over the horizon,
row stochasticity, joint connectivity, supporting sequences) are checked
exactly on the configured horizon; statistical conditions (zero-mean
noise, second-moment bounds, dither uniformity) are checked empirically
on sampled sequences with 5-sigma bands.  Conditions that are not
observable from the artifact (measurability statements) are reported as
not checkable rather than silently passed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .linalg import max_eig, min_eig
from .model import check_collective_observability, find_lss
from .quantization import quantize
from .runner import truth_rng
from .scenario import ScenarioConfig, simulate_truth
from .topology import check_joint_connectivity

PASS = "pass"
FAIL = "fail"
SKIP = "not-checkable"

_MIN_SAMPLES = 10_000


@dataclass
class Check:
    code: str
    description: str
    status: str
    detail: str = ""


@dataclass
class AssumptionReport:
    checks: list[Check] = field(default_factory=list)

    def add(self, code: str, description: str, status: str, detail: str = ""):
        self.checks.append(Check(code, description, status, detail))

    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.status == FAIL]

    @property
    def all_structural_pass(self) -> bool:
        return not any(c.status == FAIL and c.code.endswith("-struct") for c in self.checks)

    def lines(self) -> list[str]:
        width = max(len(c.code) for c in self.checks) if self.checks else 0
        return [
            f"{c.code:<{width}}  [{c.status:>13}]  {c.description}"
            + (f"  ({c.detail})" if c.detail else "")
            for c in self.checks
        ]


def _second_moment_check(samples: np.ndarray, bound: np.ndarray) -> tuple[bool, str]:
    """Empirical E{s s^T} against a bound matrix, with a 5-sigma slack on
    the dominant sample variance."""
    m = samples.shape[0]
    emp = samples.T @ samples / m
    slack = 5.0 * float(np.max(np.std(samples ** 2, axis=0))) / np.sqrt(m)
    margin = min_eig(np.asarray(bound) + slack * np.eye(emp.shape[0]) - emp)
    return margin >= 0, f"lam_min(bound + slack - emp) = {margin:.3g}"


def _zero_mean_check(samples: np.ndarray) -> tuple[bool, str]:
    m = samples.shape[0]
    mean = samples.mean(axis=0)
    band = 5.0 * samples.std(axis=0) / np.sqrt(m) + 1e-12
    ok = bool(np.all(np.abs(mean) <= band))
    return ok, f"max |mean|/band = {float(np.max(np.abs(mean) / band)):.3g}"


def validate_assumptions(scenario: ScenarioConfig, samples: int = _MIN_SAMPLES,
                         seed: int = 0) -> AssumptionReport:
    rep = AssumptionReport()
    mc = scenario.model
    horizon = scenario.horizon
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA55)))

    # --- noise bound structure (exact over horizon) ---
    q_mins = [min_eig(mc.q.at(k)) for k in range(horizon)]
    q_maxs = [max_eig(mc.q.at(k)) for k in range(horizon)]
    ok = min(q_mins) > 0 and np.isfinite(max(q_maxs))
    rep.add("noise.Q-struct", "process-noise bound positive definite and bounded",
            PASS if ok else FAIL,
            f"inf lam_min = {min(q_mins):.3g}, sup lam_max = {max(q_maxs):.3g}")

    r_sup = max(max_eig(mc.r[i].at(k)) for i in range(mc.n_sensors)
                for k in range(0, horizon, max(1, horizon // 50)))
    rep.add("noise.R-struct", "observation-noise bound positive somewhere and finite",
            PASS if 0 < r_sup < np.inf else FAIL, f"sup lam_max = {r_sup:.3g}")

    # --- process / observation noise statistics (sampled) ---
    q0 = mc.q.at(0)
    w = rng.multivariate_normal(np.zeros(mc.n), q0, size=samples)
    ok, detail = _zero_mean_check(w)
    rep.add("noise.w-mean", "process noise zero mean (sampled)", PASS if ok else FAIL, detail)
    ok, detail = _second_moment_check(w, q0)
    rep.add("noise.w-moment", "process noise second moment within bound",
            PASS if ok else FAIL, detail)

    v = rng.normal(0.0, np.sqrt(mc.r[0].at(1)[0, 0]), size=(samples, 1))
    ok, detail = _zero_mean_check(v)
    rep.add("noise.v-mds", "observation noise zero mean given past (sampled)",
            PASS if ok else FAIL, detail)
    rep.add("noise.b-measurable", "bias measurable w.r.t. past filtration", SKIP,
            "structural property of the generator, not observable from samples")

    # --- trajectory-dependent statistics: bias and dynamics increment ---
    n_traj = 60
    length = min(horizon, 60)
    bias_samples = {i: [] for i in range(mc.n_sensors)}
    u_samples = []
    short = scenario.with_overrides(horizon=length)
    for t in range(n_traj):
        truth = simulate_truth(short, truth_rng(seed, t))
        u_samples.append(np.diff(truth.f, axis=0))
        for i in range(mc.n_sensors):
            bias_samples[i].append(truth.b[i])
    bias_ok = True
    worst = ""
    for i in range(mc.n_sensors):
        arr = np.stack(bias_samples[i])  # (trajectories, length+1, m_i)
        for k in (1, length // 2, length - 1):
            # the bound is time-dependent; compare per-k samples only
            bound = mc.b_bound[i].at(k)
            sq = arr[:, k, :] ** 2
            emp = float(np.mean(sq))
            slack = 5.0 * float(np.std(sq)) / np.sqrt(sq.size)
            if emp > float(np.max(np.diagonal(bound))) + slack:
                bias_ok = False
                worst = f"sensor {i} at k={k}: emp {emp:.3g} > bound {np.max(bound):.3g}"
    rep.add("bias.moment", "observation-bias second moment within bound (sampled)",
            PASS if bias_ok else FAIL, worst)

    if mc.p:
        u = np.concatenate(u_samples, axis=0)
        ok, detail = _second_moment_check(u, mc.q_hat.at(0))
        rep.add("dynamics.u-moment",
                "uncertainty increment second moment within configured bound",
                PASS if ok else FAIL, detail)
    qh_min = min(min_eig(mc.q_hat.at(k)) for k in range(0, horizon, max(1, horizon // 50)))
    qh_max = max(max_eig(mc.q_hat.at(k)) for k in range(0, horizon, max(1, horizon // 50)))
    rep.add("dynamics.Qhat-struct", "uncertainty-increment bound positive and bounded",
            PASS if qh_min > 0 and np.isfinite(qh_max) else FAIL,
            f"inf lam_min = {qh_min:.3g}, sup lam_max = {qh_max:.3g}")

    # --- transition matrices: supporting sequence and boundedness ---
    a_seq = [mc.a_bar.at(k) for k in range(horizon)]
    v_cfg = scenario.validation
    lss = find_lss(a_seq, v_cfg.lss_window, v_cfg.lss_beta)
    sup_a = max(max_eig(a @ a.T) for a in a_seq)
    rep.add("transition.lss-struct",
            f"transition sequence has a {v_cfg.lss_window}-step supporting sequence",
            PASS if lss else FAIL,
            lss.diagnostic or f"{len(lss.times)} windows, sup gap {lss.sup_gap}")
    rep.add("transition.bounded-struct", "transition matrices uniformly bounded",
            PASS if np.isfinite(sup_a) else FAIL, f"sup lam_max(AA^T) = {sup_a:.3g}")

    # --- collective observability at the configured window ---
    obs = check_collective_observability(
        scenario.extended_model(), v_cfg.at_k, v_cfg.nbar, v_cfg.alpha
    )
    rep.add("observability", (
        f"collectively observable at k={v_cfg.at_k}, window {v_cfg.nbar}, "
        f"alpha {v_cfg.alpha} (on horizon [0,{horizon}])"),
        PASS if obs.holds else FAIL,
        f"margin1 = {obs.margin1:.4g}, margin2 = {obs.margin2:.4g}")

    # --- initial estimation error bound (sampled) ---
    init = []
    for t in range(200):
        truth = simulate_truth(scenario.with_overrides(horizon=1), truth_rng(seed + 1, t))
        init.append(truth.extended(0) - scenario.initial.x_hat[0])
    ok, detail = _second_moment_check(np.stack(init), scenario.initial.p[0])
    rep.add("initial.moment", "initial extended error second moment within P0 (sampled)",
            PASS if ok else FAIL, detail)

    # --- topology (exact) ---
    for s, g in enumerate(scenario.topology.graphs):
        rows_ok = np.allclose(g.adjacency.sum(axis=1), 1.0, atol=1e-12)
        diag_ok = np.all(np.diag(g.adjacency) > 0)
        rep.add(f"topology.rows[{s}]-struct",
                f"adjacency {s} row stochastic with positive diagonal",
                PASS if rows_ok and diag_ok else FAIL)
    conn = check_joint_connectivity(scenario.topology.schedule(horizon), horizon)
    rep.add("topology.joint-struct",
            "union graph over every interval strongly connected",
            PASS if conn.all_connected else FAIL,
            f"{len(conn.failures())} failing interval(s), k0 = {conn.interval_bound}, "
            f"weights drawn from {len(conn.weight_set)} values")

    # --- dither (sampled, when quantization enabled) ---
    deltas = np.asarray(scenario.deltas)
    if np.any(deltas > 0):
        delta = float(deltas[deltas > 0][0])
        z = rng.normal(0.0, 3.0, size=samples)
        xi = rng.uniform(-delta / 2, delta / 2, size=samples)
        err = quantize(z + xi, delta) - (z + xi)
        counts, _ = np.histogram(err, bins=20, range=(-delta / 2, delta / 2))
        pval = stats.chisquare(counts).pvalue
        rep.add("dither.uniform", "dithered quantization error uniform (chi-square)",
                PASS if pval > 0.01 else FAIL, f"p = {pval:.3g}")
    else:
        rep.add("dither.uniform", "dithered quantization error uniform",
                SKIP, "quantization disabled (delta = 0)")
    return rep
