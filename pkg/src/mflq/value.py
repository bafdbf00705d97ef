"""Value-function ansatz, lifted costs, feedback synthesis, and the
Bellman residual check.

Measures enter only through (mean, covariance): for a law with those
moments, Var(mu)(M) = tr(M Cov), so every expression here is a closed
moment form. The Bellman residual re-assembles the identity the Riccati
system was derived from, with time derivatives taken by centered finite
differences of the stored solution — an independent consistency check
(using the ODE right-hand sides would make it zero by construction).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import OutOfDomainError
from .model import AffineFeedback, LqModel, MomentState
from .riccati import (RiccatiSolution, RiccatiState, _aux_arrays, checked_eigh,
                      spd_solve)


def value(sol: RiccatiSolution, t: float, ms: MomentState) -> float:
    """tr(Lam(t) Cov) + mean'Gam(t) mean + gam(t).mean + chi(t)."""
    st = sol.at(t)
    m = ms.mean
    return float(np.trace(st.Lam @ ms.cov) + m @ st.Gam @ m + st.gam @ m + st.chi)


def g_hat(model: LqModel, ms: MomentState) -> float:
    """Lifted terminal cost tr(P2 Cov) + mean'(P2+P2bar) mean + (p1+p1bar).mean."""
    c = model.cost
    m = ms.mean
    return float(np.trace(c.P2 @ ms.cov) + m @ (c.P2 + c.P2bar) @ m
                 + (c.p1 + c.p1bar) @ m)


def _f_hat_raw(model: LqModel, t: float, K1, K2, k0, m, cov) -> float:
    c = model.cost
    abar = K2 @ m + k0
    K1S = K1 @ cov
    return float(
        np.trace(c.Q2(t) @ cov) + m @ (c.Q2(t) + c.Q2bar(t)) @ m
        + np.trace(c.R2(t) @ K1S @ K1.T) + abar @ (c.R2(t) + c.R2bar(t)) @ abar
        + 2.0 * m @ (c.M2(t) + c.M2bar(t)) @ abar
        + 2.0 * np.trace(c.M2(t) @ K1S)
        + (c.q1(t) + c.q1bar(t)) @ m + (c.r1(t) + c.r1bar(t)) @ abar
    )


def f_hat_affine(model: LqModel, t: float, fb: AffineFeedback,
                 ms: MomentState) -> float:
    """Lifted running cost of an affine feedback, in moment-closed form.

    With a = K1(x-m) + K2 m + k the control law has mean K2 m + k and
    covariance K1 Cov K1', and the state-control cross term reduces to
    2 tr(M2 K1 Cov).
    """
    model.check_time(t)
    K1, K2, k0 = fb.gains(t)
    return _f_hat_raw(model, t, K1, K2, k0, ms.mean, ms.cov)


def control_objective(model: LqModel, t: float, state: RiccatiState,
                      fb: AffineFeedback, ms: MomentState) -> float:
    """The inner minimization target over feedback laws, in moment form:

        tr(U K1 Cov K1') + abar'V abar + 2 tr(S K1 Cov) + 2 m'Z abar + Y.abar
    """
    model.check_time(t)
    U, V, S, Z, Y = _aux_arrays(model, t, state.Lam, state.Gam, state.gam)
    K1, K2, k0 = fb.gains(t)
    m = ms.mean
    abar = K2 @ m + k0
    K1S = K1 @ ms.cov
    return float(np.trace(U @ K1S @ K1.T) + abar @ V @ abar
                 + 2.0 * np.trace(S @ K1S) + 2.0 * m @ Z @ abar + Y @ abar)


def g_inf(model: LqModel, t: float, state: RiccatiState, ms: MomentState) -> float:
    """Value of the inner minimization at its argmin:

        -tr(S U^{-1} S' Cov) - m'Z V^{-1} Z' m - Y'V^{-1} Z' m - 1/4 Y'V^{-1}Y
    """
    model.check_time(t)
    U, V, S, Z, Y = _aux_arrays(model, t, state.Lam, state.Gam, state.gam)
    wU, qU = checked_eigh(U, t, "U")
    wV, qV = checked_eigh(V, t, "V")
    Ui_St = spd_solve(wU, qU, S.T)
    Vi_Zt = spd_solve(wV, qV, Z.T)
    Vi_Y = spd_solve(wV, qV, Y)
    m = ms.mean
    return float(-np.trace(S @ Ui_St @ ms.cov) - m @ Z @ Vi_Zt @ m
                 - Y @ Vi_Zt @ m - 0.25 * Y @ Vi_Y)


def optimal_feedback(model: LqModel, sol: RiccatiSolution) -> AffineFeedback:
    """Synthesize the minimizing law

        a*(t, x, mu) = -U^{-1}S' (x - mean) - V^{-1}Z' mean - 1/2 V^{-1} Y.

    Gains are evaluated on demand through the solution's Hermite
    interpolation, so K1, K2, k inherit the integrator's accuracy at every
    t, not only at grid knots.
    """
    d, m = model.dims.d, model.dims.m

    @lru_cache(maxsize=16)
    def gains_at(t: float):
        st = sol.at(t)
        U, V, S, Z, Y = _aux_arrays(model, t, st.Lam, st.Gam, st.gam)
        wU, qU = checked_eigh(U, t, "U")
        wV, qV = checked_eigh(V, t, "V")
        return (-spd_solve(wU, qU, S.T),
                -spd_solve(wV, qV, Z.T),
                -0.5 * spd_solve(wV, qV, Y))

    return AffineFeedback(
        k1=lambda t: gains_at(t)[0],
        k2=lambda t: gains_at(t)[1],
        k0=lambda t: gains_at(t)[2],
        m=m, d=d,
    )


def apply_feedback(fb: AffineFeedback, t: float, x, mean_x) -> np.ndarray:
    """K1(t)(x - mean_x) + K2(t) mean_x + k(t)."""
    return fb(t, x, mean_x)


def bellman_residual(model: LqModel, sol: RiccatiSolution, t: float,
                     ms: MomentState) -> float:
    """Residual of the dynamic-programming identity at (t, ms); 0 for the
    exact solution.

    Time derivatives of (Lam, Gam, gam, chi) are centered finite
    differences with the grid step, so the residual is bounded by the
    finite-difference plus integrator error rather than being identically
    zero. The grouping mirrors the identification that produced the ODE
    system: the Var(.) block, the mean-quadratic block, the mean-linear
    block (including gam'), and the scalar block, plus the minimized inner
    objective.
    """
    dt = sol.step
    if not (t - dt >= 0.0 and t + dt <= sol.horizon):
        raise OutOfDomainError(
            f"t={t} must be at least one grid step inside (0, {sol.horizon})")
    st = sol.at(t)
    up, dn = sol.at(t + dt), sol.at(t - dt)
    dL = (up.Lam - dn.Lam) / (2.0 * dt)
    dG = (up.Gam - dn.Gam) / (2.0 * dt)
    dg = (up.gam - dn.gam) / (2.0 * dt)
    dc = (up.chi - dn.chi) / (2.0 * dt)

    dyn, cost = model.dynamics, model.cost
    B, Bb = dyn.B(t), dyn.Bbar(t)
    D, Db = dyn.D(t), dyn.Dbar(t)
    b0, s0 = dyn.b0(t), dyn.sigma0(t)
    BpB, DpD = B + Bb, D + Db
    L, G, g = st.Lam, st.Gam, st.gam
    m, cov = ms.mean, ms.cov

    var_block = dL + cost.Q2(t) + D.T @ L @ D + L @ B + B.T @ L
    mean_quad = dG + cost.Q2(t) + cost.Q2bar(t) + DpD.T @ L @ DpD \
        + G @ BpB + BpB.T @ G
    mean_lin = dg + BpB.T @ g + cost.q1(t) + cost.q1bar(t) \
        + 2.0 * DpD.T @ (L @ s0) + 2.0 * G @ b0
    scalar = dc + g @ b0 + s0 @ (L @ s0)
    return float(np.trace(var_block @ cov) + m @ mean_quad @ m
                 + mean_lin @ m + scalar + g_inf(model, t, st, ms))
