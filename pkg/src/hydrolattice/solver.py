"""Log-barrier interior-point solver for linear-dynamics expected-utility problems on a lattice.

The node-level problem is

    maximise  sum_t beta_{t+1} E[U(V_{t+1})] + mu sum_t E[1' log(E_t y_t + F_t u_t - e_t)]

subject to ``y_{t+1}(c) = sum_n w(n, c) (A y_t(n) + B u_t(n)) + b_{t+1}(c)``, where
``w`` are the lattice parent weights and the stage wealth on the edge
``n -> c`` is ``V = value_lin(c) . u_t(n) + value_const(c)``.

Internally the negated objective is minimised.  One Newton step is obtained
from a backward Riccati sweep over layers: a child state averages several
parents, so the value-function coefficients ``(alpha, w, W)`` are carried for
the stacked states of a whole layer.  The step is then applied layer by layer
with a fraction-to-boundary damping, and ``mu`` follows ``mu0 * exp(-j)``
with one Newton step per value until it drops below ``mu_cp``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import linprog, nnls

from .lattice import Lattice, NodeField
from .utility import Utility

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class InfeasibleError(SolverError):
    """No strictly interior point exists."""


class InteriorityError(SolverError):
    """A slack is not strictly positive where the barrier is evaluated."""


class NumericalError(SolverError):
    """Factorisation failure or non-finite values in the Newton system."""


def _stage_array(x, T: int, shape: tuple, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape == shape:
        return np.broadcast_to(x, (T + 1,) + shape).copy()
    if x.shape == (T + 1,) + shape:
        return x.copy()
    raise ValueError(f"{name} must have shape {shape} or {(T + 1,) + shape}, got {x.shape}")


@dataclass
class ProblemInstance:
    """Lattice problem with linear dynamics and linear inequality constraints.

    Stage-indexed matrices accept a single matrix (used for every stage) or a
    stack with one entry per time ``0..T``.  ``A[t+1]``, ``B[t+1]`` drive the
    move from layer ``t`` to ``t+1``; ``E[t]``, ``F[t]``, ``e[t]`` constrain
    layer ``t`` for ``t = t0 .. T-1``.

    Attributes
    ----------
    lattice : Lattice
    t0 : int
        First decision time; states on layer ``t0`` equal ``y0``.
    y0 : array (K,)
    A, B : stage matrices (K, K) and (K, N)
    b : list of arrays (N_t, K) for layers ``t0+1 .. T``
    E, F : stage matrices (L, K) and (L, N)
    e : list of arrays (N_t, L) or (L,) for layers ``t0 .. T-1``
    value_lin : list of arrays (N_t, N) for layers ``t0+1 .. T``
    value_const : list of arrays (N_t,) for layers ``t0+1 .. T``
    utility : Utility
    beta : array (T+1,); entries ``t0+1 .. T`` are used
    u_lower, u_upper : optional (N,) control box used to pick the start point
    """

    lattice: Lattice
    t0: int
    y0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    b: list
    E: np.ndarray
    F: np.ndarray
    e: list
    value_lin: list
    value_const: list
    utility: Utility
    beta: np.ndarray = None
    u_lower: Optional[np.ndarray] = None
    u_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        lat, T, t0 = self.lattice, self.lattice.T, self.t0
        if not 0 <= t0 < T:
            raise ValueError(f"t0 must lie in 0..{T - 1}, got {t0}")
        self.y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        K = self.y0.size
        B = np.asarray(self.B, dtype=float)
        N = B.shape[-1]
        self.A = _stage_array(self.A, T, (K, K), "A")
        self.B = _stage_array(B, T, (K, N), "B")
        E = np.asarray(self.E, dtype=float)
        L = E.shape[-2]
        self.E = _stage_array(E, T, (L, K), "E")
        self.F = _stage_array(self.F, T, (L, N), "F")
        self.beta = np.ones(T + 1) if self.beta is None else np.asarray(self.beta, dtype=float)
        if self.beta.shape != (T + 1,) or np.any(self.beta[t0 + 1:] <= 0):
            raise ValueError("beta needs T+1 entries, positive on t0+1..T")
        self.b = self._layers(self.b, t0 + 1, T, (K,), "b")
        self.e = self._layers(self.e, t0, T - 1, (L,), "e")
        self.value_lin = self._layers(self.value_lin, t0 + 1, T, (N,), "value_lin")
        self.value_const = self._layers(self.value_const, t0 + 1, T, (), "value_const")
        self._maps = {}
        if self.u_lower is not None:
            self.u_lower = np.asarray(self.u_lower, dtype=float).reshape(N)
            self.u_upper = np.asarray(self.u_upper, dtype=float).reshape(N)

    def _layers(self, data, start, stop, tail, name):
        if len(data) != stop - start + 1:
            raise ValueError(f"{name} needs {stop - start + 1} layers ({start}..{stop}), got {len(data)}")
        out = []
        for t, v in zip(range(start, stop + 1), data):
            v = np.asarray(v, dtype=float)
            shape = (self.lattice.size(t),) + tail
            if v.shape == tail:
                v = np.broadcast_to(v, shape)
            if v.shape != shape:
                raise ValueError(f"{name} at layer {t} has shape {v.shape}, expected {shape}")
            out.append(np.array(v))
        return out

    @property
    def T(self) -> int:
        return self.lattice.T

    @property
    def n_states(self) -> int:
        return self.y0.size

    @property
    def n_controls(self) -> int:
        return self.B.shape[-1]

    @property
    def n_constraints(self) -> int:
        return self.E.shape[-2]

    def control_times(self) -> range:
        return range(self.t0, self.T)

    # -- layer operators -----------------------------------------------------
    def state_map(self, t: int) -> sp.csr_matrix:
        """Stacked-state transition ``Pi_t (x) A_{t+1}`` from layer ``t`` to ``t+1``."""
        key = ("A", t)
        if key not in self._maps:
            self._maps[key] = sp.kron(self.lattice.aggregation(t), self.A[t + 1], format="csr")
        return self._maps[key]

    def control_map(self, t: int) -> sp.csr_matrix:
        key = ("B", t)
        if key not in self._maps:
            self._maps[key] = sp.kron(self.lattice.aggregation(t), self.B[t + 1], format="csr")
        return self._maps[key]

    # -- evaluation ----------------------------------------------------------
    def rollout(self, u: Sequence[np.ndarray]) -> list:
        """States on layers ``t0..T`` (list indexed from ``t0``) for controls ``u``."""
        lat = self.lattice
        y = [np.tile(self.y0, (lat.size(self.t0), 1))]
        for i, t in enumerate(self.control_times()):
            drift = y[i] @ self.A[t + 1].T + u[i] @ self.B[t + 1].T
            y.append(lat.aggregation(t) @ drift + self.b[i])
        return y

    def slack(self, t: int, y_t: np.ndarray, u_t: np.ndarray) -> np.ndarray:
        i = t - self.t0
        return y_t @ self.E[t].T + u_t @ self.F[t].T - self.e[i]

    def stage_wealth(self, t: int, u_t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wealth on the edges leaving layer ``t``: ``(V, value_lin, parent)``."""
        parent, child, _ = self.lattice.edges(t)
        i = t - self.t0
        vl = self.value_lin[i][child]
        V = np.einsum("ej,ej->e", vl, u_t[parent]) + self.value_const[i][child]
        return V, vl, parent

    def utility_value(self, u: Sequence[np.ndarray]) -> float:
        """Expected weighted utility ``sum_t beta_t E[U(V_t)]``."""
        total = 0.0
        for i, t in enumerate(self.control_times()):
            V, _, parent = self.stage_wealth(t, u[i])
            self.utility.check_domain(V, f"stage {t + 1}")
            Pn = self.lattice.prob(t)[parent] / self.lattice.k
            total += self.beta[t + 1] * float(Pn @ self.utility.value(V))
        return total

    def barrier_value(self, y: Sequence[np.ndarray], u: Sequence[np.ndarray], mu: float) -> float:
        total = self.utility_value(u)
        if mu == 0:
            return total
        for i, t in enumerate(self.control_times()):
            s = self.slack(t, y[i], u[i])
            if np.any(s <= 0):
                return -math.inf
            total += mu * float(self.lattice.prob(t) @ np.log(s).sum(axis=1))
        return total


@dataclass
class SolverConfig:
    """Interior-point parameters.

    The defaults follow the published schedule ``mu_j = 1e-12 exp(-j)`` with a
    central-path threshold of ``1e-16`` and a single Newton step per barrier
    value.  That short path can jam against the boundary when constraints
    bind; ``mu0=1`` together with ``centering_steps > 1`` repeats Newton steps
    at each ``mu_j`` until the decrement relative to ``mu`` falls below
    ``centering_tol``, which tracks the central path closely.
    """

    mu0: float = 1e-12
    mu_cp: float = 1e-16
    max_central_path_newton_steps: int = 100
    xi: float = 0.95
    tol: float = 1e-8
    reg_floor: float = 1e-10
    damping: str = "layerwise"
    max_backtracks: int = 40
    centering_steps: int = 1
    centering_tol: float = 0.25
    stall_decrement: float = 1e-10

    @classmethod
    def recommended(cls, **overrides) -> "SolverConfig":
        """Robust preset: ``mu0=1``, up to 50 centring steps per barrier value, uniform damping.

        Uniform damping reaches the ``tol`` criterion more reliably once
        active slacks are at rounding level, and is cheaper per step than
        the layerwise ratio tests.
        """
        params = dict(mu0=1.0, centering_steps=50, damping="uniform")
        params.update(overrides)
        return cls(**params)

    def __post_init__(self):
        if not 0 < self.mu_cp < self.mu0:
            raise ValueError("need 0 < mu_cp < mu0")
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if self.centering_steps < 1:
            raise ValueError("centering_steps must be at least 1")
        if self.damping not in ("layerwise", "frozen", "uniform"):
            raise ValueError("damping must be 'layerwise', 'frozen' or 'uniform'")


@dataclass
class StageBlocks:
    """Per-node quadratic model of the negated barrier objective on one layer.

    Gradients ``q`` (N_t, K), ``r`` (N_t, N); Hessians ``Q`` (N_t, K, K),
    ``P`` (N_t, K, N), ``R`` (N_t, N, N).  Values are conditional on the node
    (not multiplied by its probability).
    """

    t: int
    q: np.ndarray
    r: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    R: np.ndarray
    slack: np.ndarray


def stage_blocks(instance: ProblemInstance, t: int, y_t: np.ndarray, u_t: np.ndarray, mu: float,
                 cap_curvature: bool = False) -> StageBlocks:
    """Gradient and Hessian blocks of ``-(beta U(V) + mu log slack)`` at every node of layer ``t``.

    With ``cap_curvature`` the barrier Hessian weight ``1/s**2`` is capped at
    the rounding resolution of the slack (see :func:`riccati_backward`).
    """
    s = instance.slack(t, y_t, u_t)
    if np.any(s <= 0):
        n, l = np.argwhere(s <= 0)[0]
        raise InteriorityError(f"slack {s[n, l]:.3e} <= 0 at layer {t}, node {n}, row {l}")
    E, F = instance.E[t], instance.F[t]
    inv = 1.0 / s
    inv2 = inv * inv
    if cap_curvature:
        # a slack is only known to the rounding error of the terms forming it
        resolution = 64.0 * np.finfo(float).eps * (np.abs(y_t) @ np.abs(E.T) + np.abs(u_t) @ np.abs(F.T)
                                                   + np.abs(instance.e[t - instance.t0]))
        inv2 = 1.0 / np.maximum(s, resolution) ** 2
    q = -mu * inv @ E
    r = -mu * inv @ F
    Q = mu * np.einsum("nl,lk,lj->nkj", inv2, E, E)
    P = mu * np.einsum("nl,lk,lj->nkj", inv2, E, F)
    R = mu * np.einsum("nl,lk,lj->nkj", inv2, F, F)
    V, vl, _ = instance.stage_wealth(t, u_t)
    instance.utility.check_domain(V, f"stage {t + 1}")
    k, N, n = instance.lattice.k, instance.n_controls, y_t.shape[0]
    beta = instance.beta[t + 1]
    d1 = instance.utility.d1(V)[:, None] * vl
    d2 = instance.utility.d2(V)[:, None, None] * vl[:, :, None] * vl[:, None, :]
    r = r - beta * d1.reshape(n, k, N).mean(axis=1)
    R = R - beta * d2.reshape(n, k, N, N).mean(axis=1)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(R))):
        raise NumericalError(f"non-finite model blocks at layer {t}")
    return StageBlocks(t, q, r, Q, P, R, s)


def _block_diag(blocks: np.ndarray, weights: np.ndarray) -> np.ndarray:
    n, a, b = blocks.shape
    out = np.zeros((n * a, n * b))
    ar = np.arange(n)
    out.reshape(n, a, n, b)[ar, :, ar, :] = weights[:, None, None] * blocks
    return out


@dataclass
class RiccatiSweep:
    """Result of a backward sweep: affine Newton rules per layer.

    For layer ``t`` the Newton step is ``du = ff[i] + fb[i] @ dy`` on stacked
    node vectors.  ``alpha``, ``w``, ``W`` are the value-function coefficients
    and ``R_tilde`` the regularised tilde Hessians.
    """

    t0: int
    ff: list
    fb: list
    alpha: list
    w: list
    W: list
    R_tilde: list
    blocks: list

    @property
    def decrement(self) -> float:
        """Predicted decrease of the negated objective for the full step."""
        return -self.alpha[0]

    def min_eig(self, t: int) -> float:
        return float(la.eigvalsh(self.R_tilde[t - self.t0])[0])


def riccati_backward(instance: ProblemInstance, y: Sequence[np.ndarray], u: Sequence[np.ndarray],
                     mu: float, config: SolverConfig = None, cap_curvature: bool = False) -> RiccatiSweep:
    """Backward sweep producing the Newton rules ``du_t = ff_t + fb_t dy_t``.

    With per-layer blocks ``q, r, Q, P, R`` (probability-weighted and stacked)
    and next-layer coefficients ``(alpha', w', W')``::

        r~ = r + B'w'          R~ = R + B'W'B
        q~ = q + A'w'          Q~ = Q + A'W'A        P~ = P + A'W'B
        du = -R~^{-1}(r~ + P~' dy)
        alpha = alpha' - r~'R~^{-1}r~ / 2
        w = q~ - P~ R~^{-1} r~,   W = Q~ - P~ R~^{-1} P~'
    """
    config = config or SolverConfig()
    lat, t0, T = instance.lattice, instance.t0, instance.T
    K, N = instance.n_states, instance.n_controls
    nT = lat.size(T)
    w_next = np.zeros(nT * K)
    W_next = np.zeros((nT * K, nT * K))
    alpha_next = 0.0
    ff, fb, alphas, ws, Ws, Rts, blocks = [], [], [], [], [], [], []
    for t in reversed(range(t0, T)):
        i = t - t0
        blk = stage_blocks(instance, t, y[i], u[i], mu, cap_curvature)
        p = lat.prob(t)
        Am, Bm = instance.state_map(t), instance.control_map(t)
        WB = (Bm.T @ W_next).T
        WA = (Am.T @ W_next).T
        Rt = _block_diag(blk.R, p) + Bm.T @ WB
        Pt = _block_diag(blk.P, p) + Am.T @ WB
        Qt = _block_diag(blk.Q, p) + Am.T @ WA
        rt = (p[:, None] * blk.r).ravel() + Bm.T @ w_next
        qt = (p[:, None] * blk.q).ravel() + Am.T @ w_next
        Rt = 0.5 * (Rt + Rt.T)
        # the diagonal floor is only added when the plain factorisation fails
        # or has a pivot at rounding level, so well-posed steps stay exact
        floor = config.reg_floor * (np.repeat(p, N) + np.abs(Rt).sum(axis=1))
        Rt_reg, cho = Rt, None
        try:
            cho = la.cho_factor(Rt, lower=True, check_finite=True)
            if np.any(np.diag(cho[0]) ** 2 <= floor):
                cho = None
        except (la.LinAlgError, ValueError):
            cho = None
        if cho is None:
            Rt_reg = Rt + np.diag(floor)
            try:
                cho = la.cho_factor(Rt_reg, lower=True, check_finite=True)
            except (la.LinAlgError, ValueError) as exc:
                d = np.diag(Rt_reg)
                raise NumericalError(f"tilde Hessian not positive definite at layer {t} "
                                     f"(node {int(np.argmin(d)) // N}): {exc}") from None
        kff = -la.cho_solve(cho, rt)
        kfb = -la.cho_solve(cho, Pt.T)
        alpha = alpha_next + 0.5 * float(rt @ kff)
        w = qt + Pt @ kff
        W = Qt + Pt @ kfb
        W = 0.5 * (W + W.T)
        if not (np.all(np.isfinite(kff)) and np.all(np.isfinite(W))):
            raise NumericalError(f"non-finite Riccati data at layer {t}")
        ff.append(kff); fb.append(kfb); alphas.append(alpha); ws.append(w); Ws.append(W)
        Rts.append(Rt_reg); blocks.append(blk)
        w_next, W_next, alpha_next = w, W, alpha
    rev = lambda x: x[::-1]
    return RiccatiSweep(t0, rev(ff), rev(fb), rev(alphas), rev(ws), rev(Ws), rev(Rts), rev(blocks))


def newton_direction(instance: ProblemInstance, sweep: RiccatiSweep) -> tuple[list, list]:
    """Undamped Newton step ``(du, dy)`` obtained by rolling the rules forward."""
    lat, t0 = instance.lattice, instance.t0
    K, N = instance.n_states, instance.n_controls
    dy = [np.zeros(lat.size(t0) * K)]
    du = []
    for i, t in enumerate(instance.control_times()):
        d = sweep.ff[i] + sweep.fb[i] @ dy[i]
        du.append(d.reshape(-1, N))
        dy.append(instance.state_map(t) @ dy[i] + instance.control_map(t) @ d)
    return du, [d.reshape(-1, K) for d in dy]


def _max_step(s: np.ndarray, ds: np.ndarray) -> float:
    """Largest ``eps`` keeping ``s + eps * ds > 0`` (``s > 0``)."""
    neg = ds < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-s[neg] / ds[neg]))


@dataclass
class StepResult:
    u: list
    y: list
    eps: np.ndarray
    eps_bar: np.ndarray
    max_du: float
    backtracks: int
    accepted: bool


def feasibility_step(instance: ProblemInstance, y: list, u: list, sweep: RiccatiSweep,
                     config: SolverConfig, theta: float = 1.0) -> StepResult:
    """Apply the Newton rules layer by layer with fraction-to-boundary damping.

    ``damping="layerwise"``: layers are processed in time order.  At layer
    ``t`` the state deviation caused by earlier (already damped) layers is
    fed back through the rules, and the feed-forward part is scaled by a
    fraction ``eps``; later layers are assumed to follow their rules with the
    same fraction.  The resulting trajectory is affine in ``eps`` and feasible
    at the previous layer's fraction, so the ratio test over the layer's own
    and all later slacks gives ``eps_bar_t`` and
    ``eps_t = eps_{t-1} + min(xi (eps_bar_t - eps_{t-1}), theta - eps_{t-1})``.
    The first layer starts from ``theta * min(xi * eps_bar, 1)``; ``theta``
    (halved by the caller on an objective decrease) caps every layer.

    ``damping="frozen"``: the ratio test for layer ``t`` keeps later controls
    at their current values, ``eps_t = theta * min(xi * eps_bar_t, 1)``.

    ``damping="uniform"``: one fraction for the whole Newton direction.
    """
    if config.damping == "uniform":
        return _uniform_step(instance, y, u, sweep, config, theta)
    if config.damping == "frozen":
        return _frozen_step(instance, y, u, sweep, config, theta)
    T, N, K = instance.T, instance.n_controls, instance.n_states
    times = list(instance.control_times())
    n_layers = len(times)
    u_new = [x.copy() for x in u]
    y_new = [x.copy() for x in y]
    eps = np.zeros(n_layers)
    eps_bar = np.zeros(n_layers)
    prev = 0.0
    for i, t in enumerate(times):
        # trajectories of layers i.. : feedback on the current deviation, and feed-forward part
        dev = (y_new[i] - y[i]).ravel()
        dff = np.zeros_like(dev)
        fb_u, ff_u, fb_y, ff_y = [], [], [dev], [dff]
        for m in range(i, n_layers):
            a = sweep.fb[m] @ fb_y[-1]
            b = sweep.ff[m] + sweep.fb[m] @ ff_y[-1]
            fb_u.append(a)
            ff_u.append(b)
            if m + 1 < n_layers:
                fb_y.append(instance.state_map(times[m]) @ fb_y[-1] + instance.control_map(times[m]) @ a)
                ff_y.append(instance.state_map(times[m]) @ ff_y[-1] + instance.control_map(times[m]) @ b)

        def slacks(e):
            out = []
            for j, m in enumerate(range(i, n_layers)):
                yy = y[m] + (fb_y[j] + e * ff_y[j]).reshape(-1, K)
                uu = u[m] + (fb_u[j] + e * ff_u[j]).reshape(-1, N)
                out.append(instance.slack(times[m], yy, uu).ravel())
            return np.concatenate(out)

        def dslacks():
            out = []
            for j, m in enumerate(range(i, n_layers)):
                out.append((ff_y[j].reshape(-1, K) @ instance.E[times[m]].T
                            + ff_u[j].reshape(-1, N) @ instance.F[times[m]].T).ravel())
            return np.concatenate(out)

        base = slacks(prev)
        # a non-positive entry can only come from rounding: keep the previous fraction
        bar = prev + _max_step(base, dslacks()) if np.all(base > 0) else prev
        eps_bar[i] = bar
        if bar == prev:
            e = prev
        elif i == 0:
            e = theta * min(config.xi * bar, 1.0)
        else:
            e = prev + min(config.xi * (bar - prev), theta - prev) if prev < theta else prev
        # guard against rounding pushing a slack to zero
        for _ in range(60):
            if np.all(slacks(e) > 0):
                break
            e = prev + 0.5 * (e - prev)
        else:
            e = prev
        eps[i] = e
        prev = e
        u_new[i] = u[i] + (fb_u[0] + e * ff_u[0]).reshape(-1, N)
        y_new[i + 1] = (y[i + 1].ravel() + instance.state_map(t) @ dev
                        + instance.control_map(t) @ (u_new[i] - u[i]).ravel()).reshape(-1, K)
    if not all(np.all(instance.slack(t, y_new[i], u_new[i]) > 0) for i, t in enumerate(times)):
        logger.debug("layerwise step lost interiority to rounding; using a uniform step")
        return _uniform_step(instance, y, u, sweep, config, theta)
    max_du = max(float(np.max(np.abs(a - b))) for a, b in zip(u_new, u))
    return StepResult(u_new, y_new, eps, eps_bar, max_du, 0, True)


def _frozen_step(instance: ProblemInstance, y: list, u: list, sweep: RiccatiSweep,
                 config: SolverConfig, theta: float) -> StepResult:
    """Layerwise damping with later controls held at their current values."""
    lat, t0, T = instance.lattice, instance.t0, instance.T
    K, N = instance.n_states, instance.n_controls
    n_layers = T - t0
    u_new = [x.copy() for x in u]
    y_pred = [x.copy() for x in y]
    eps = np.zeros(n_layers)
    eps_bar = np.zeros(n_layers)

    for i, t in enumerate(instance.control_times()):
        dy_t = (y_pred[i] - y[i]).ravel()
        d = (sweep.ff[i] + sweep.fb[i] @ dy_t).reshape(-1, N)
        # state response of later layers to this layer's step, later controls frozen
        resp = [instance.control_map(t) @ d.ravel()]
        for s_t in range(t + 1, T):
            resp.append(instance.state_map(s_t) @ resp[-1])
        resp = [r.reshape(-1, K) for r in resp]
        s_now = instance.slack(t, y_pred[i], u_new[i])
        bar = _max_step(s_now.ravel(), (d @ instance.F[t].T).ravel())
        for j, s_t in enumerate(range(t + 1, T)):
            s_later = instance.slack(s_t, y_pred[i + 1 + j], u_new[i + 1 + j])
            bar = min(bar, _max_step(s_later.ravel(), (resp[j] @ instance.E[s_t].T).ravel()))
        eps_bar[i] = bar
        if bar <= 0:
            raise InteriorityError(f"direction immediately infeasible at layer {t}")
        e_t = theta * min(config.xi * bar, 1.0)
        # guard against rounding pushing a slack to zero
        for _ in range(60):
            cand_u = u_new[i] + e_t * d
            cand_y = [y_pred[i + 1 + j] + e_t * resp[j] for j in range(T - t)]
            ok = np.all(instance.slack(t, y_pred[i], cand_u) > 0)
            for j, s_t in enumerate(range(t + 1, T)):
                ok = ok and np.all(instance.slack(s_t, cand_y[j], u_new[i + 1 + j]) > 0)
            if ok:
                break
            e_t *= 0.5
        else:
            e_t = 0.0
            cand_u, cand_y = u_new[i], [y_pred[i + 1 + j] for j in range(T - t)]
        eps[i] = e_t
        u_new[i] = cand_u
        for j in range(T - t):
            y_pred[i + 1 + j] = cand_y[j]
    max_du = max(float(np.max(np.abs(a - b))) for a, b in zip(u_new, u))
    return StepResult(u_new, y_pred, eps, eps_bar, max_du, 0, True)


def _uniform_step(instance: ProblemInstance, y: list, u: list, sweep: RiccatiSweep,
                  config: SolverConfig, theta: float) -> StepResult:
    """One fraction-to-boundary factor for the whole Newton direction."""
    du, dy = newton_direction(instance, sweep)
    bar = math.inf
    for i, t in enumerate(instance.control_times()):
        s = instance.slack(t, y[i], u[i])
        ds = dy[i] @ instance.E[t].T + du[i] @ instance.F[t].T
        bar = min(bar, _max_step(s.ravel(), ds.ravel()))
    e = theta * min(config.xi * bar, 1.0)
    for _ in range(60):
        u_new = [a + e * d for a, d in zip(u, du)]
        y_new = instance.rollout(u_new)
        if all(np.all(instance.slack(t, y_new[i], u_new[i]) > 0) for i, t in enumerate(instance.control_times())):
            break
        e *= 0.5
    else:
        u_new, y_new, e = [x.copy() for x in u], [x.copy() for x in y], 0.0
    n_layers = instance.T - instance.t0
    max_du = max(float(np.max(np.abs(a - b))) for a, b in zip(u_new, u))
    return StepResult(u_new, y_new, np.full(n_layers, e), np.full(n_layers, bar), max_du, 0, True)


@dataclass
class OptimalPlan:
    """Converged (or best) iterate with multipliers and diagnostics.

    ``multipliers`` are the level-equation multipliers per node (conditional,
    in objective units per state unit); ``ineq_multipliers`` are ``mu / slack``.
    """

    instance: ProblemInstance
    u: NodeField
    y: NodeField
    multipliers: NodeField
    ineq_multipliers: NodeField
    objective: float
    barrier_objective: float
    mu: float
    converged: bool
    iterations: int
    log: list = field(default_factory=list)
    decreases: int = 0

    def controls(self) -> list:
        return [self.u[t] for t in self.u.times()]

    def states(self) -> list:
        return [self.y[t] for t in self.y.times()]


def inequality_multipliers(instance: ProblemInstance, y: list, u: list, mu: float,
                           active_tol: float = 1e-8) -> tuple[list, list]:
    """KKT multipliers ``z >= 0`` of the inequalities and level multipliers ``lam``.

    Both are per unit node probability.  Constraints whose slack exceeds
    ``active_tol * (1 + |e|)`` keep the barrier estimate ``mu / s``; for the
    remaining (active) rows ``z`` is fitted by non-negative least squares to
    stationarity in the controls,

        grad_u h + F' z + B' E_t[lam_{t+1}] = 0,

    and the levels follow from stationarity in the states,
    ``lam_t = E' z + A' E_t[lam_{t+1}]`` with ``lam_T = 0``.  At small ``mu``
    the barrier estimate alone is unusable because active slacks are only
    resolved to rounding level.
    """
    lat, t0, T = instance.lattice, instance.t0, instance.T
    K = instance.n_states
    lam_next = np.zeros((lat.size(T), K))
    lams, zs = [lam_next], []
    for t in reversed(range(t0, T)):
        i = t - t0
        s = instance.slack(t, y[i], u[i])
        V, vl, parent = instance.stage_wealth(t, u[i])
        d1 = instance.utility.d1(V)[:, None] * vl
        grad_u = instance.beta[t + 1] * d1.reshape(-1, lat.k, vl.shape[1]).mean(axis=1)
        E_lam = np.column_stack([lat.child_mean(t, lam_next[:, m]) for m in range(K)])
        A, B = instance.A[t + 1], instance.B[t + 1]
        E, F = instance.E[t], instance.F[t]
        active = s <= active_tol * (1.0 + np.abs(instance.e[i]))
        z = np.where(active, 0.0, mu / s)
        for n in np.flatnonzero(active.any(axis=1)):
            J = active[n]
            rhs = -(grad_u[n] + F[~J].T @ z[n, ~J] + B.T @ E_lam[n])
            z[n, J] = nnls(F[J].T, rhs)[0]
        lam = z @ E + E_lam @ A
        zs.append(z)
        lams.append(lam)
        lam_next = lam
    return zs[::-1], lams[::-1]


def costates(instance: ProblemInstance, y: list, u: list, mu: float) -> list:
    """Level-equation multipliers per node (per unit node probability), layers ``t0..T``."""
    return inequality_multipliers(instance, y, u, mu)[1]


def initial_point(instance: ProblemInstance) -> tuple[list, list]:
    """Strictly interior start: box midpoint if interior, else a max-margin LP point."""
    lat, N = instance.lattice, instance.n_controls
    if instance.u_lower is not None:
        mid = 0.5 * (instance.u_lower + instance.u_upper)
    else:
        mid = np.zeros(N)
    u = [np.tile(mid, (lat.size(t), 1)) for t in instance.control_times()]
    y = instance.rollout(u)
    if all(np.all(instance.slack(t, y[i], u[i]) > 0) for i, t in enumerate(instance.control_times())):
        return u, y
    logger.info("box midpoint not interior; solving a feasibility LP")
    u = _max_margin_point(instance)
    return u, instance.rollout(u)


def _max_margin_point(instance: ProblemInstance) -> list:
    lat, t0, T = instance.lattice, instance.t0, instance.T
    K, N, L = instance.n_states, instance.n_controls, instance.n_constraints
    nu = [lat.size(t) * N for t in range(t0, T)]
    ny = [lat.size(t) * K for t in range(t0, T + 1)]
    u_off = np.concatenate([[0], np.cumsum(nu)])
    y_off = u_off[-1] + np.concatenate([[0], np.cumsum(ny)])
    n_var = y_off[-1] + 1
    tau = n_var - 1
    eq_rows, eq_rhs = [], []
    first = sp.lil_matrix((ny[0], n_var))
    first[:, y_off[0]:y_off[1]] = sp.eye(ny[0])
    eq_rows.append(first.tocsr())
    eq_rhs.append(np.tile(instance.y0, lat.size(t0)))
    ub_rows, ub_rhs = [], []
    for i, t in enumerate(range(t0, T)):
        rows = ny[i + 1]
        blk = sp.hstack([
            sp.csr_matrix((rows, u_off[i])), -instance.control_map(t),
            sp.csr_matrix((rows, y_off[i] - u_off[i + 1])), -instance.state_map(t), sp.eye(rows),
            sp.csr_matrix((rows, n_var - y_off[i + 2]))], format="csr")
        eq_rows.append(blk)
        eq_rhs.append(instance.b[i].ravel())
        n = lat.size(t)
        Eb = sp.kron(sp.eye(n), instance.E[t])
        Fb = sp.kron(sp.eye(n), instance.F[t])
        ineq = sp.hstack([
            sp.csr_matrix((n * L, u_off[i])), -Fb, sp.csr_matrix((n * L, y_off[i] - u_off[i + 1])),
            -Eb, sp.csr_matrix((n * L, n_var - 1 - y_off[i + 1])), sp.csr_matrix(np.ones((n * L, 1)))],
            format="csr")
        ub_rows.append(ineq)
        ub_rhs.append(-instance.e[i].ravel())
    cap = 1.0
    if instance.u_lower is not None:
        cap = max(0.25 * float(np.min(instance.u_upper - instance.u_lower)), 1e-9)
    c = np.zeros(n_var)
    c[tau] = -1.0
    bounds = [(None, None)] * (n_var - 1) + [(None, cap)]
    res = linprog(c, A_ub=sp.vstack(ub_rows), b_ub=np.concatenate(ub_rhs),
                  A_eq=sp.vstack(eq_rows), b_eq=np.concatenate(eq_rhs), bounds=bounds, method="highs")
    if res.status != 0 or res.x[tau] <= 1e-9 * cap:
        margin = res.x[tau] if res.x is not None else float("nan")
        raise InfeasibleError(f"constraints have no strictly interior point (max margin {margin:.3g})")
    x = res.x
    return [x[u_off[i]:u_off[i + 1]].reshape(-1, N) for i in range(T - t0)]


def solve(instance: ProblemInstance, config: SolverConfig = None, start: tuple = None) -> OptimalPlan:
    """Diagonal barrier / Newton iteration.

    While ``mu_j >= mu_cp`` one damped Newton step (or up to
    ``centering_steps``) is taken per barrier value ``mu_j = mu0 exp(-j)``;
    afterwards Newton steps continue at fixed ``mu``
    until the undamped Newton step is below ``tol`` (sup norm, control units)
    or the step budget runs out.  An iterate whose damped step is below the
    floating-point resolution of the controls while the predicted decrease is below ``stall_decrement`` (relative to the
    objective) is also accepted: the barrier minimiser then lies closer to the
    bounds than floating point resolves.  If the Newton system cannot be
    factorised even with capped barrier curvature, the current iterate is
    returned with ``converged=False``.
    """
    config = config or SolverConfig()
    lat, t0 = instance.lattice, instance.t0
    u, y = start if start is not None else initial_point(instance)
    j, mu = 0, config.mu0
    log, decreases, newton_steps, it = [], 0, 0, 0
    converged, at_mu = False, 0
    while True:
        it += 1
        try:
            sweep = riccati_backward(instance, y, u, mu, config)
        except NumericalError:
            # slacks at rounding level: their curvature is noise and breaks the
            # recursion through cancellation, so cap it at the slack resolution
            logger.debug("iter %d: tilde Hessian indefinite; capping barrier curvature", it)
            try:
                sweep = riccati_backward(instance, y, u, mu, config, cap_curvature=True)
            except NumericalError as exc:
                logger.warning("iter %d: stopping at the current iterate: %s", it, exc)
                break
        f_old = instance.barrier_value(y, u, mu)
        newton_max = max(float(np.max(np.abs(d))) for d in newton_direction(instance, sweep)[0])
        theta, backtracks = 1.0, 0
        while True:
            step = feasibility_step(instance, y, u, sweep, config, theta)
            if step.max_du == 0.0 and config.damping != "uniform":
                # blocked by slacks at rounding level: the joint step may still move
                step = _uniform_step(instance, y, u, sweep, config, theta)
            f_new = instance.barrier_value(step.y, step.u, mu)
            if f_new >= f_old - 1e-12 * (1.0 + abs(f_old)) or backtracks >= config.max_backtracks:
                break
            theta *= 0.5
            backtracks += 1
        if f_new < f_old - 1e-12 * (1.0 + abs(f_old)):
            decreases += 1
        u, y = step.u, step.y
        min_slack = min(float(instance.slack(t, y[i], u[i]).min()) for i, t in enumerate(instance.control_times()))
        log.append({"iter": it, "j": j, "mu": mu, "objective": instance.utility_value(u),
                    "barrier_objective": f_new, "newton_du": newton_max, "max_du": step.max_du, "min_slack": min_slack,
                    "decrement": sweep.decrement, "backtracks": backtracks,
                    "eps": ";".join(f"{e:.6g}" for e in step.eps)})
        logger.debug("iter %d mu=%.3e max_du=%.3e min_slack=%.3e", it, mu, step.max_du, min_slack)
        if mu >= config.mu_cp:
            at_mu += 1
            if (at_mu < config.centering_steps and step.max_du > 0
                    and sweep.decrement > config.centering_tol * mu):
                continue
            at_mu = 0
            j += 1
            mu = config.mu0 * math.exp(-j)
            continue
        newton_steps += 1
        # a step below the resolution of the controls means the blocking slacks
        # sit at rounding level; accept when the model predicts no relevant
        # objective gain either
        u_scale = 1.0 + max(float(np.max(np.abs(ui))) for ui in u)
        null_step = step.max_du <= 64 * np.finfo(float).eps * u_scale
        stalled = null_step and sweep.decrement <= config.stall_decrement * (1.0 + abs(f_new))
        if newton_max < config.tol or stalled:
            converged = True
            break
        if newton_steps >= config.max_central_path_newton_steps:
            logger.warning("no convergence after %d central-path Newton steps", newton_steps)
            break
    z, lam = inequality_multipliers(instance, y, u, mu)
    return OptimalPlan(
        instance=instance,
        u=NodeField(lat, t0, u, unit="control", name="u"),
        y=NodeField(lat, t0, y, unit="state", name="y"),
        multipliers=NodeField(lat, t0, lam, name="level multiplier"),
        ineq_multipliers=NodeField(lat, t0, z, name="inequality multiplier"),
        objective=instance.utility_value(u),
        barrier_objective=instance.barrier_value(y, u, mu),
        mu=mu, converged=converged, iterations=it, log=log, decreases=decreases)
