"""Per-sensor distributed filter: prediction with a tuning parameter
theta, an observation update weighted by mu, optional event-triggered
gating of that update, quantized broadcast, and covariance-intersection
fusion of neighbor messages.

Each stage keeps the pair (estimate, bound) consistent: the bound P is a
guaranteed upper bound of the mean square error, which is what makes the
inverse-covariance-weighted fusion legitimate under unknown correlation
between neighbors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import NumericalError, ValidationError
from .linalg import max_eig, spd_inverse, symmetrize
from .quantization import (
    Message,
    compensate_covariance,
    dither_quantize_vector,
    quantize_matrix_plain,
)

TIME_DRIVEN = "time_driven"
EVENT_TRIGGERED = "event_triggered"

_WEIGHT_SUM_TOL = 1e-9


@dataclass
class FilterParams:
    """Tuning knobs shared by both update schemes.

    theta is either the closed-form trace minimizer (clamped into
    ``theta_bounds``) or a fixed value; mu is fixed by default and can be
    optimized over ``mu_bounds`` per step.  tau only matters for the
    event-triggered scheme.
    """

    theta_mode: str = "closed_form"  # or "fixed"
    theta: float = 1.0
    theta_bounds: tuple[float, float] = (1e-6, 1e6)
    mu_mode: str = "fixed"  # or "optimized"
    mu: float = 0.3
    mu_bounds: tuple[float, float] = (1e-3, 1e3)
    tau: float = 0.0
    update_scheme: str = TIME_DRIVEN

    def __post_init__(self):
        if self.theta_mode not in ("closed_form", "fixed"):
            raise ValidationError(f"unknown theta_mode {self.theta_mode!r}")
        if self.mu_mode not in ("fixed", "optimized"):
            raise ValidationError(f"unknown mu_mode {self.mu_mode!r}")
        if self.update_scheme not in (TIME_DRIVEN, EVENT_TRIGGERED):
            raise ValidationError(f"unknown update_scheme {self.update_scheme!r}")
        if self.tau < 0:
            raise ValidationError(f"trigger threshold must be >= 0, got {self.tau}")
        if self.theta_mode == "fixed" and not (
            self.theta_bounds[0] < self.theta <= self.theta_bounds[1]
        ):
            raise ValidationError("fixed theta outside its bounds")
        if self.mu_mode == "fixed" and self.mu <= 0:
            raise ValidationError(f"mu must be positive, got {self.mu}")


@dataclass
class NodeState:
    """One sensor's filter memory plus the per-step intermediates."""

    node_id: int
    x_hat: np.ndarray
    p: np.ndarray
    x_bar: np.ndarray | None = None
    p_bar: np.ndarray | None = None
    x_tilde: np.ndarray | None = None
    p_tilde: np.ndarray | None = None
    gain: np.ndarray | None = None
    trigger_log: list[int] = field(default_factory=list)


def design_theta(a: np.ndarray, p: np.ndarray, q_bar: np.ndarray,
                 bounds: tuple[float, float] = (1e-6, 1e6)) -> float:
    """Closed-form minimizer of tr(P_bar) over theta:
    theta* = sqrt(tr(Q_bar) / tr(A P A^T)), clamped into ``bounds``."""
    tr_apa = float(np.trace(a @ p @ a.T))
    if tr_apa <= 0:
        raise NumericalError("degenerate prediction trace: tr(A P A^T) <= 0")
    theta = np.sqrt(float(np.trace(q_bar)) / tr_apa)
    return float(min(max(theta, bounds[0]), bounds[1]))


def gain(p_bar: np.ndarray, h: np.ndarray, r: np.ndarray, b: np.ndarray,
         mu: float, context: str = "gain") -> np.ndarray:
    """Trace-optimal gain K = P_bar H^T (H P_bar H^T + R/(1+mu) + B/mu)^{-1}."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    innov = h @ p_bar @ h.T + np.asarray(r, dtype=float) / (1.0 + mu) \
        + np.asarray(b, dtype=float) / mu
    try:
        inv = spd_inverse(innov, context=context)
    except NumericalError as exc:
        raise NumericalError(f"singular innovation matrix ({context})") from exc
    return p_bar @ h.T @ inv


def updated_bound(p_bar: np.ndarray, k_gain: np.ndarray, h: np.ndarray,
                  r: np.ndarray, b: np.ndarray, mu: float) -> np.ndarray:
    """Post-update bound in the form valid for any gain:
    (1+mu)(I-KH) P_bar (I-KH)^T + K (R + (1+mu)/mu B) K^T.
    Coincides with (1+mu)(I-KH) P_bar at the optimal gain."""
    nbar = p_bar.shape[0]
    ikh = np.eye(nbar) - k_gain @ h
    mid = np.asarray(r, dtype=float) + (1.0 + mu) / mu * np.asarray(b, dtype=float)
    return symmetrize((1.0 + mu) * ikh @ p_bar @ ikh.T + k_gain @ mid @ k_gain.T)


def _mu_objective(mu: float, p_bar: np.ndarray, h: np.ndarray,
                  r: np.ndarray, b: np.ndarray) -> float:
    k = gain(p_bar, h, r, b, mu, context="design_mu")
    return float(np.trace(updated_bound(p_bar, k, h, r, b, mu)))


def design_mu(p_bar: np.ndarray, h: np.ndarray, r: np.ndarray, b: np.ndarray,
              bounds: tuple[float, float] = (1e-3, 1e3)) -> float:
    """Minimize tr(P_tilde(mu)) over [mu_1, mu_2] by a coarse scan (linear
    plus log spacing, the objective need not be convex) refined with a
    bounded 1-D search on the best bracket."""
    lo, hi = bounds
    if not 0 < lo < hi:
        raise ValidationError(f"mu bounds must satisfy 0 < mu1 < mu2, got {bounds}")
    h = np.atleast_2d(np.asarray(h, dtype=float))
    grid = np.unique(np.concatenate([
        np.linspace(lo, hi, 257),
        np.geomspace(lo, hi, 257),
    ]))
    vals = np.array([_mu_objective(m, p_bar, h, r, b) for m in grid])
    if not np.all(np.isfinite(vals)):
        raise NumericalError("non-finite objective in design_mu")
    best = int(np.argmin(vals))
    blo = grid[max(best - 1, 0)]
    bhi = grid[min(best + 1, grid.size - 1)]
    res = minimize_scalar(
        _mu_objective, bounds=(blo, bhi), args=(p_bar, h, r, b),
        method="bounded", options={"xatol": 1e-12},
    )
    candidates = [(vals[best], grid[best]), (float(res.fun), float(res.x))]
    return float(min(candidates)[1])


def predict(node: NodeState, a: np.ndarray, q_bar: np.ndarray,
            q_tilde: np.ndarray, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Prediction stage: X_bar = A X_hat and
    P_bar = (1+theta) A P A^T + (1+theta)/theta Q_bar + Q_tilde."""
    if theta <= 0:
        raise ValidationError(f"theta must be positive, got {theta}")
    node.x_bar = a @ node.x_hat
    node.p_bar = symmetrize(
        (1.0 + theta) * a @ node.p @ a.T + (1.0 + theta) / theta * q_bar + q_tilde
    )
    return node.x_bar, node.p_bar


def update(node: NodeState, y: np.ndarray, h: np.ndarray, r: np.ndarray,
           b: np.ndarray, mu: float, context: str = "update") -> tuple[np.ndarray, np.ndarray]:
    """Observation update with the trace-optimal gain."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    k = gain(node.p_bar, h, r, b, mu, context=context)
    node.gain = k
    node.x_tilde = node.x_bar + k @ (np.atleast_1d(y) - h @ node.x_bar)
    node.p_tilde = updated_bound(node.p_bar, k, h, r, b, mu)
    return node.x_tilde, node.p_tilde


def information_metric(h: np.ndarray, r: np.ndarray, b: np.ndarray, mu: float) -> np.ndarray:
    """S = H^T (R + (1+mu)/mu B)^{-1} H, the information carried by the
    current observation channel."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    dr = np.asarray(r, dtype=float) + (1.0 + mu) / mu * np.asarray(b, dtype=float)
    return h.T @ spd_inverse(dr, context="information_metric") @ h


def trigger_value(p_bar: np.ndarray, h: np.ndarray, r: np.ndarray,
                  b: np.ndarray, mu: float) -> float:
    """lambda_max(S - mu/(1+mu) P_bar^{-1}), compared against tau."""
    s = information_metric(h, r, b, mu)
    pbi = spd_inverse(p_bar, context="trigger_value")
    return max_eig(s - mu / (1.0 + mu) * pbi)


def trigger_decision(p_bar: np.ndarray, h: np.ndarray, r: np.ndarray,
                     b: np.ndarray, mu: float, tau: float) -> bool:
    """Fire the update event iff the observation adds information beyond
    the threshold in at least one direction (strict comparison)."""
    if tau < 0:
        raise ValidationError(f"trigger threshold must be >= 0, got {tau}")
    return trigger_value(p_bar, h, r, b, mu) > tau


def trigger_decision_equivalent(p_tilde: np.ndarray, p_bar: np.ndarray, tau: float) -> bool:
    """Equivalent trigger form lambda_max(P_tilde^{-1} - P_bar^{-1}) > tau,
    with P_tilde from the triggered-branch formula (test oracle)."""
    diff = spd_inverse(p_tilde, context="trigger_equiv") - spd_inverse(
        p_bar, context="trigger_equiv"
    )
    return max_eig(diff) > tau


def fuse(node: NodeState, messages: Sequence[Message], weights: dict[int, float],
         context: str = "fuse") -> tuple[np.ndarray, np.ndarray]:
    """Covariance-intersection fusion over the neighbor set.

    The node's own pair enters unquantized; every neighbor bound gets the
    diagonal compensation for its quantization step before inversion.
    Weights must be the positive adjacency-row entries and sum to one.
    """
    total = sum(weights.values())
    if abs(total - 1.0) > _WEIGHT_SUM_TOL:
        raise ValidationError(f"fusion weights sum to {total!r}, expected 1 ({context})")
    if node.node_id not in weights:
        raise ValidationError(f"fusion weights must include the node itself ({context})")
    nbar = node.p.shape[0]
    by_sender = {m.sender: m for m in messages}
    omega = np.zeros((nbar, nbar))
    zeta = np.zeros(nbar)
    for j, a_ij in weights.items():
        if j == node.node_id:
            x_j = node.x_tilde
            p_j = node.p_tilde
        else:
            try:
                msg = by_sender[j]
            except KeyError:
                raise ValidationError(f"missing message from neighbor {j} ({context})")
            x_j = msg.x_check
            p_j = compensate_covariance(msg.p_check, msg.delta, nbar)
        inv_j = spd_inverse(p_j, context=f"{context} neighbor {j}")
        omega += a_ij * inv_j
        zeta += a_ij * (inv_j @ x_j)
    node.p = spd_inverse(omega, context=f"{context} fused information")
    node.x_hat = node.p @ zeta
    return node.x_hat, node.p


@dataclass
class StepInputs:
    """Everything one sensor consumes during step k."""

    y: np.ndarray
    h: np.ndarray
    r: np.ndarray
    b: np.ndarray
    a_prev: np.ndarray
    q_bar_prev: np.ndarray
    q_tilde_prev: np.ndarray
    weights: dict[int, float]
    messages: Sequence[Message] = ()


def resolve_theta(node: NodeState, a_prev: np.ndarray, q_bar_prev: np.ndarray,
                  params: FilterParams) -> float:
    if params.theta_mode == "fixed":
        return params.theta
    return design_theta(a_prev, node.p, q_bar_prev, params.theta_bounds)


def resolve_mu(node: NodeState, inputs: StepInputs, params: FilterParams) -> float:
    if params.mu_mode == "fixed":
        return params.mu
    return design_mu(node.p_bar, inputs.h, inputs.r, inputs.b, params.mu_bounds)


def local_pass(node: NodeState, inputs: StepInputs, params: FilterParams,
               k: int) -> bool:
    """Prediction plus (possibly gated) update; returns whether the
    update event fired.  Time-driven nodes always update."""
    theta = resolve_theta(node, inputs.a_prev, inputs.q_bar_prev, params)
    predict(node, inputs.a_prev, inputs.q_bar_prev, inputs.q_tilde_prev, theta)
    mu = resolve_mu(node, inputs, params)
    ctx = f"sensor {node.node_id} time {k}"
    if params.update_scheme == EVENT_TRIGGERED:
        fired = trigger_decision(node.p_bar, inputs.h, inputs.r, inputs.b, mu, params.tau)
        if fired:
            update(node, inputs.y, inputs.h, inputs.r, inputs.b, mu, context=ctx)
            node.trigger_log.append(k)
        else:
            node.x_tilde = node.x_bar.copy()
            node.p_tilde = node.p_bar.copy()
            node.gain = None
        return fired
    update(node, inputs.y, inputs.h, inputs.r, inputs.b, mu, context=ctx)
    return True


def encode_message(node: NodeState, delta: float, rng: np.random.Generator) -> Message:
    """Quantize the updated pair for broadcast: dithered quantization of
    the estimate, plain quantization of the bound."""
    return Message(
        sender=node.node_id,
        x_check=dither_quantize_vector(node.x_tilde, delta, rng),
        p_check=quantize_matrix_plain(node.p_tilde, delta),
        delta=delta,
    )


def step(node: NodeState, inputs: StepInputs, params: FilterParams, k: int) -> NodeState:
    """One complete filter step for an isolated node whose neighbor
    messages are already materialized in ``inputs.messages``."""
    local_pass(node, inputs, params, k)
    fuse(node, inputs.messages, inputs.weights, context=f"sensor {node.node_id} time {k}")
    return node


def network_step(nodes: Sequence[NodeState], inputs: Sequence[StepInputs],
                 params: FilterParams, deltas: Sequence[float],
                 rngs: Sequence[np.random.Generator], k: int) -> list[bool]:
    """Synchronous round over all nodes: every node finishes its local
    pass and encodes its broadcast before any node fuses."""
    fired = [local_pass(node, inp, params, k) for node, inp in zip(nodes, inputs)]
    messages = [encode_message(node, d, rng) for node, d, rng in zip(nodes, deltas, rngs)]
    for node, inp in zip(nodes, inputs):
        neigh = [messages[j] for j in inp.weights if j != node.node_id]
        fuse(node, neigh, inp.weights, context=f"sensor {node.node_id} time {k}")
    return fired
