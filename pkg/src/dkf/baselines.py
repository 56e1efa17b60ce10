"""Comparison filters: centralized Kalman filter on the nominal model
(CKF), centralized filter on the extended model (CESKF), and a
consensus-on-posteriors distributed filter (DSEA-CP).

CKF and DSEA-CP deliberately model the nominal linear system only; the
uncertain dynamics and observation biases present in the data are what
drive their divergence in the comparison scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError
from .linalg import spd_inverse, symmetrize


@dataclass
class CentralizedState:
    x_hat: np.ndarray
    p: np.ndarray


@dataclass
class ConsensusNodeState:
    """Information pair (Omega = P^{-1}, q = P^{-1} x_hat)."""

    omega: np.ndarray
    q: np.ndarray

    @property
    def x_hat(self) -> np.ndarray:
        return spd_inverse(self.omega, context="consensus state") @ self.q

    @property
    def p(self) -> np.ndarray:
        return spd_inverse(self.omega, context="consensus state")


def kf_gain_and_cov(p: np.ndarray, a: np.ndarray, q: np.ndarray, h: np.ndarray,
                    r: np.ndarray, context: str = "kf") -> tuple[np.ndarray, np.ndarray]:
    """Covariance half of a textbook KF step: returns the gain and the
    Joseph-form posterior covariance."""
    p_bar = symmetrize(a @ p @ a.T + q)
    innov = h @ p_bar @ h.T + r
    try:
        inv = spd_inverse(innov, context=context)
    except NumericalError as exc:
        raise NumericalError(f"singular innovation ({context})") from exc
    k = p_bar @ h.T @ inv
    ikh = np.eye(p_bar.shape[0]) - k @ h
    return k, symmetrize(ikh @ p_bar @ ikh.T + k @ r @ k.T)


def kf_predict_update(state: CentralizedState, y: np.ndarray, a: np.ndarray,
                      q: np.ndarray, h: np.ndarray, r: np.ndarray,
                      context: str = "kf") -> CentralizedState:
    """Textbook predict + update with Joseph-form covariance."""
    k, p_new = kf_gain_and_cov(state.p, a, q, h, r, context=context)
    x_bar = a @ state.x_hat
    state.x_hat = x_bar + k @ (y - h @ x_bar)
    state.p = p_new
    return state


def stack_observations(model, k: int, extended: bool):
    """Stacked H (original or extended columns) and block-diagonal R over
    all sensors at time k."""
    base = model.base if extended else model
    hs, rs = [], []
    for i in range(base.n_sensors):
        hs.append(np.atleast_2d(model.h(k, i) if extended else base.h_bar(k, i)))
        rs.append(np.atleast_2d(base.r(k, i)))
    h = np.vstack(hs)
    mtot = h.shape[0]
    r = np.zeros((mtot, mtot))
    at = 0
    for ri in rs:
        m = ri.shape[0]
        r[at : at + m, at : at + m] = ri
        at += m
    return h, r


def ckf_step(state: CentralizedState, y_stack: np.ndarray, model, k: int) -> CentralizedState:
    """Standard KF on the nominal system using all sensors' observations."""
    h, r = stack_observations(model, k, extended=False)
    return kf_predict_update(
        state, y_stack, np.asarray(model.a_bar(k - 1), dtype=float),
        np.asarray(model.q(k - 1), dtype=float), h, r, context=f"ckf time {k}"
    )


def ceskf_step(state: CentralizedState, y_stack: np.ndarray, ext_model, k: int,
               q_hat: np.ndarray | None = None) -> CentralizedState:
    """Standard KF on the extended model; the process covariance is
    Q_tilde + D Q_hat D^T with Q_hat taken from the argument when the
    filter's tuning differs from the truth bound."""
    h, r = stack_observations(ext_model, k, extended=True)
    d = ext_model.d
    qh = np.asarray(q_hat, dtype=float) if q_hat is not None \
        else np.asarray(ext_model.base.q_hat(k - 1), dtype=float)
    q_proc = ext_model.q_tilde(k - 1) + d @ qh @ d.T
    return kf_predict_update(
        state, y_stack, ext_model.a(k - 1), q_proc, h, r, context=f"ceskf time {k}"
    )


def dsea_cp_step(nodes: Sequence[ConsensusNodeState], observations: Sequence[np.ndarray],
                 weights: Sequence[dict[int, float]], model, k: int,
                 consensus_iterations: int = 1) -> list[ConsensusNodeState]:
    """Information-form predict and local update at every node, then
    consensus sweeps averaging the posterior information pairs with the
    row-stochastic weights."""
    a = np.asarray(model.a_bar(k - 1), dtype=float)
    q = np.asarray(model.q(k - 1), dtype=float)
    updated: list[ConsensusNodeState] = []
    for i, node in enumerate(nodes):
        p_prev = spd_inverse(node.omega, context=f"dsea-cp node {i} time {k}")
        x_prev = p_prev @ node.q
        p_bar = symmetrize(a @ p_prev @ a.T + q)
        omega_bar = spd_inverse(p_bar, context=f"dsea-cp node {i} time {k}")
        h = np.atleast_2d(np.asarray(model.h_bar(k, i), dtype=float))
        r_inv = spd_inverse(np.atleast_2d(model.r(k, i)), context=f"dsea-cp R node {i}")
        omega = omega_bar + h.T @ r_inv @ h
        qvec = omega_bar @ (a @ x_prev) + h.T @ r_inv @ np.atleast_1d(observations[i])
        updated.append(ConsensusNodeState(symmetrize(omega), qvec))
    for _ in range(consensus_iterations):
        mixed = []
        for i in range(len(updated)):
            omega = sum(w * updated[j].omega for j, w in weights[i].items())
            qvec = sum(w * updated[j].q for j, w in weights[i].items())
            mixed.append(ConsensusNodeState(symmetrize(omega), qvec))
        updated = mixed
    return list(updated)
