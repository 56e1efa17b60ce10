"""State-space models, the extended-state reconstruction, observability
grammians, and supporting-sequence detection.

The original model is

    x[k+1] = A_bar(k) x[k] + G_bar(k) f(x[k], k) + w[k]
    y[k,i] = H_bar(k,i) x[k] + b[k,i] + v[k,i]

with unknown dynamics f of dimension p.  Augmenting the state with f
gives a linear model in the extended state X = [x; f] whose transition
is block upper triangular; the filters operate on that extended model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .linalg import min_eig, spd_inverse, symmetrize

DEFAULT_LSS_BETA = 1e-8


@dataclass
class SystemModel:
    """Time-varying system matrices and noise bounds.

    Matrix-valued fields are callables of time (``a_bar``, ``g_bar``,
    ``q``, ``q_hat``) or of time and sensor (``h_bar``, ``r``, ``b_bound``);
    ``f`` is the uncertain-dynamics generator and ``bias`` draws the
    observation bias b[k, i].
    """

    n: int
    p: int
    m: Sequence[int]  # observation dimension per sensor
    a_bar: Callable[[int], np.ndarray]
    g_bar: Callable[[int], np.ndarray]
    h_bar: Callable[[int, int], np.ndarray]
    q: Callable[[int], np.ndarray]
    r: Callable[[int, int], np.ndarray]
    b_bound: Callable[[int, int], np.ndarray]
    q_hat: Callable[[int], np.ndarray]
    f: Callable[[np.ndarray, int], np.ndarray] | None = None
    bias: Callable[[np.ndarray, int, int, np.random.Generator], np.ndarray] | None = None
    process_noise: Callable[[int, np.random.Generator], np.ndarray] | None = None
    obs_noise: Callable[[int, int, np.random.Generator], np.ndarray] | None = None

    @property
    def n_sensors(self) -> int:
        return len(self.m)

    def validate_dimensions(self, k: int = 0) -> None:
        checks = [
            ("A_bar", self.a_bar(k), (self.n, self.n)),
            ("G_bar", self.g_bar(k), (self.n, self.p)),
            ("Q", self.q(k), (self.n, self.n)),
            ("Q_hat", self.q_hat(k), (self.p, self.p)),
        ]
        for i, mi in enumerate(self.m):
            checks.append((f"H_bar[sensor {i}]", self.h_bar(k, i), (mi, self.n)))
            checks.append((f"R[sensor {i}]", self.r(k, i), (mi, mi)))
            checks.append((f"B[sensor {i}]", self.b_bound(k, i), (mi, mi)))
        for name, mat, shape in checks:
            if np.asarray(mat).shape != shape:
                raise ValidationError(
                    f"{name} has shape {np.asarray(mat).shape}, expected {shape}"
                )


@dataclass
class ExtendedModel:
    """Extended-state reformulation: A = [[A_bar, G_bar], [0, I_p]],
    H = [H_bar, 0], D = [0; I_p], Q_tilde = blockdiag(Q, 0),
    Q_bar = D Q_hat D^T."""

    base: SystemModel

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def p(self) -> int:
        return self.base.p

    @property
    def nbar(self) -> int:
        return self.base.n + self.base.p

    @property
    def n_sensors(self) -> int:
        return self.base.n_sensors

    @property
    def d(self) -> np.ndarray:
        n, p = self.base.n, self.base.p
        return np.vstack([np.zeros((n, p)), np.eye(p)])

    def a(self, k: int) -> np.ndarray:
        n, p = self.base.n, self.base.p
        out = np.zeros((n + p, n + p))
        out[:n, :n] = self.base.a_bar(k)
        out[:n, n:] = self.base.g_bar(k)
        out[n:, n:] = np.eye(p)
        return out

    def h(self, k: int, i: int) -> np.ndarray:
        hb = np.asarray(self.base.h_bar(k, i), dtype=float)
        return np.hstack([hb, np.zeros((hb.shape[0], self.base.p))])

    def q_tilde(self, k: int) -> np.ndarray:
        n, p = self.base.n, self.base.p
        out = np.zeros((n + p, n + p))
        out[:n, :n] = self.base.q(k)
        return out

    def q_bar(self, k: int) -> np.ndarray:
        d = self.d
        return d @ np.asarray(self.base.q_hat(k), dtype=float) @ d.T


def build_extended_model(model: SystemModel) -> ExtendedModel:
    """Validate the base model's dimensions and wrap it in the extended
    block form."""
    model.validate_dimensions()
    return ExtendedModel(model)


def transition_product(a_of_k: Callable[[int], np.ndarray], j: int, k: int, dim: int) -> np.ndarray:
    """Phi(j, k) = A(j-1) ... A(k) with Phi(k, k) = I."""
    out = np.eye(dim)
    for t in range(k, j):
        out = a_of_k(t) @ out
    return out


@dataclass
class ObservabilityGrammian:
    """Blocks of the extended observability grammian over a window
    [k, k + n_window], split by original state (theta11), cross (theta12)
    and uncertainty (theta22) coordinates."""

    theta11: np.ndarray
    theta12: np.ndarray
    theta22: np.ndarray

    def assembled(self) -> np.ndarray:
        top = np.hstack([self.theta11, self.theta12])
        bot = np.hstack([self.theta12.T, self.theta22])
        return symmetrize(np.vstack([top, bot]))


def observability_grammian(model: ExtendedModel, k: int, n_window: int) -> ObservabilityGrammian:
    """Sum over sensors and the inclusive window j = k .. k + n_window of
    Phi^T H^T (R + B)^{-1} H Phi, assembled block-wise so the original
    and uncertainty coordinates stay separate."""
    base = model.base
    n, p = base.n, base.p
    t11 = np.zeros((n, n))
    t12 = np.zeros((n, p))
    t22 = np.zeros((p, p))
    phi_bar = np.eye(n)  # Phi_bar(j, k), grown incrementally
    phi_til = np.zeros((n, p))  # Phi_tilde(j, k+1) = sum of Phi_bar(j, i) G(i-1)
    for j in range(k, k + n_window + 1):
        if j > k:
            a_prev = np.asarray(base.a_bar(j - 1), dtype=float)
            phi_bar = a_prev @ phi_bar
            phi_til = a_prev @ phi_til + np.asarray(base.g_bar(j - 1), dtype=float)
        for i in range(base.n_sensors):
            hb = np.asarray(base.h_bar(j, i), dtype=float)
            rb = np.asarray(base.r(j, i), dtype=float) + np.asarray(base.b_bound(j, i), dtype=float)
            try:
                w = spd_inverse(rb, context=f"R+B sensor {i} time {j}")
            except Exception as exc:
                raise ValidationError(
                    f"R + B not invertible for sensor {i} at time {j}"
                ) from exc
            hx = hb @ phi_bar
            hf = hb @ phi_til
            t11 += hx.T @ w @ hx
            t12 += hx.T @ w @ hf
            t22 += hf.T @ w @ hf
    return ObservabilityGrammian(symmetrize(t11), t12, symmetrize(t22))


@dataclass
class ObservabilityResult:
    holds: bool
    margin1: float
    margin2: float
    grammian: ObservabilityGrammian


def check_collective_observability(
    model: ExtendedModel, k: int, n_window: int, alpha: float
) -> ObservabilityResult:
    """Evaluate both inequalities of the extended-system observability
    test at level alpha over the window [k, k + n_window]:

      margin1 = lambda_min(theta11 - alpha I_n)
      margin2 = lambda_min(theta22 - theta12^T (theta11 - alpha I)^{-1}
                           theta12 - alpha I_p)

    The test holds iff both margins are positive, which is equivalent
    (by Schur complement) to the assembled grammian exceeding alpha I.
    """
    if alpha <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    if n_window < 0:
        raise ValidationError(f"window must be nonnegative, got {n_window}")
    g = observability_grammian(model, k, n_window)
    shifted = g.theta11 - alpha * np.eye(model.n)
    margin1 = min_eig(shifted)
    if model.p == 0:
        return ObservabilityResult(margin1 > 0, margin1, float("inf"), g)
    if margin1 > 0:
        corr = g.theta12.T @ spd_inverse(shifted, context="theta11 - alpha I") @ g.theta12
        margin2 = min_eig(g.theta22 - corr - alpha * np.eye(model.p))
    else:
        margin2 = float("-inf")  # second test undefined when the first fails
    return ObservabilityResult(margin1 > 0 and margin2 > 0, margin1, margin2, g)


@dataclass
class RankResult:
    rank: int
    holds: bool


def check_rank_condition(a_bar: np.ndarray, g_bar: np.ndarray, h_stack: np.ndarray) -> RankResult:
    """Time-invariant observability gap test:
    rank([[I - A_bar, -G_bar], [H_stack, 0]]) == n + p."""
    a_bar = np.atleast_2d(np.asarray(a_bar, dtype=float))
    g_bar = np.asarray(g_bar, dtype=float).reshape(a_bar.shape[0], -1)
    h_stack = np.atleast_2d(np.asarray(h_stack, dtype=float))
    n = a_bar.shape[0]
    p = g_bar.shape[1]
    if h_stack.shape[1] != n:
        raise ValidationError(
            f"H stack has {h_stack.shape[1]} columns, expected {n}"
        )
    block = np.block([
        [np.eye(n) - a_bar, -g_bar],
        [h_stack, np.zeros((h_stack.shape[0], p))],
    ])
    rank = int(np.linalg.matrix_rank(block))
    return RankResult(rank, rank == n + p)


@dataclass
class LssResult:
    """Start times of the qualifying windows, the spacing bound observed
    on the horizon, and a diagnostic when nothing qualified."""

    times: list[int] = field(default_factory=list)
    sup_gap: int | None = None
    diagnostic: str | None = None

    def __bool__(self) -> bool:
        return bool(self.times)


def find_lss(a_seq: Sequence[np.ndarray], window: int, beta: float = DEFAULT_LSS_BETA) -> LssResult:
    """Greedy supporting-sequence search: T_0 is the first start of a
    length-``window`` run with lambda_min(A A^T) >= beta at every step,
    and each next start is the first qualifier at least ``window`` after
    the previous one."""
    if window < 1:
        raise ValidationError(f"window length must be >= 1, got {window}")
    if beta <= 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    mats = [np.asarray(a, dtype=float) for a in a_seq]
    horizon = len(mats)
    ok = np.array([min_eig(a @ a.T) >= beta for a in mats])
    times: list[int] = []
    k = 0
    while k + window <= horizon:
        if ok[k : k + window].all():
            times.append(k)
            k += window
        else:
            k += 1
    if not times:
        return LssResult(diagnostic=f"no {window}-step supporting sequence found on horizon")
    gaps = [b - a for a, b in zip(times[:-1], times[1:])]
    return LssResult(times, max(gaps) if gaps else None)
