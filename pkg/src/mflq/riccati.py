"""Backward Riccati system for the LQ mean-field value function.

The quadratic value ansatz

    w(t, mu) = tr(Lam(t) Cov(mu)) + mean' Gam(t) mean + gam(t).mean + chi(t)

holds iff (Lam, Gam, gam, chi) solve a terminal-value ODE system: two
matrix Riccati equations coupled through the auxiliary matrices

    U = F' Lam F + R2
    V = (F+Fbar)' Lam (F+Fbar) + R2 + R2bar
    S = D' Lam F + Lam C + M2
    Z = (D+Dbar)' Lam (F+Fbar) + Gam (C+Cbar) + M2 + M2bar
    Y = (C+Cbar)' gam + r1 + r1bar + 2 (F+Fbar)' Lam sigma0

and two linear ODEs for the first-order coefficients:

    Lam' = -(Q2 + D'Lam D + Lam B + B'Lam - S U^{-1} S')
    Gam' = -(Q2+Q2bar + (D+Dbar)'Lam(D+Dbar) + Gam(B+Bbar)
             + (B+Bbar)'Gam - Z V^{-1} Z')
    gam' = -((B+Bbar)'gam - Z V^{-1} Y + q1 + q1bar
             + 2 (D+Dbar)'Lam sigma0 + 2 Gam b0)
    chi' = -(-1/4 Y'V^{-1}Y + gam.b0 + sigma0'Lam sigma0)

with terminal data Lam(T) = P2, Gam(T) = P2 + P2bar, gam(T) = p1 + p1bar,
chi(T) = 0. Integration is classical fixed-step RK4 backward in time; U
and V must stay positive definite at every stage or the solve fails fast
with a breakdown error. The stored grid states plus their ODE right-hand
sides support cubic Hermite interpolation at arbitrary times, preserving
4th-order accuracy for downstream value and feedback queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import OutOfDomainError, RiccatiBreakdownError
from .model import LqModel, sym

POSITIVITY_FLOOR = 1e-10
CONDITION_LIMIT = 1e12
PSD_TOL = 1e-12


@dataclass(frozen=True)
class RiccatiState:
    """Value-function coefficients at a single time."""

    Lam: np.ndarray
    Gam: np.ndarray
    gam: np.ndarray
    chi: float


@dataclass(frozen=True)
class AuxiliaryMatrices:
    U: np.ndarray
    V: np.ndarray
    S: np.ndarray
    Z: np.ndarray
    Y: np.ndarray


def terminal_state(model: LqModel) -> RiccatiState:
    c = model.cost
    return RiccatiState(Lam=c.P2.copy(), Gam=c.P2 + c.P2bar,
                        gam=c.p1 + c.p1bar, chi=0.0)


def _aux_arrays(model: LqModel, t: float, L: np.ndarray, G: np.ndarray,
                g: np.ndarray):
    dyn, cost = model.dynamics, model.cost
    C, Cb = dyn.C(t), dyn.Cbar(t)
    D, Db = dyn.D(t), dyn.Dbar(t)
    F, Fb = dyn.F(t), dyn.Fbar(t)
    s0 = dyn.sigma0(t)
    FpF, DpD, CpC = F + Fb, D + Db, C + Cb
    U = sym(F.T @ L @ F + cost.R2(t))
    V = sym(FpF.T @ L @ FpF + cost.R2(t) + cost.R2bar(t))
    S = D.T @ L @ F + L @ C + cost.M2(t)
    Z = DpD.T @ L @ FpF + G @ CpC + cost.M2(t) + cost.M2bar(t)
    Y = CpC.T @ g + cost.r1(t) + cost.r1bar(t) + 2.0 * FpF.T @ (L @ s0)
    return U, V, S, Z, Y


def auxiliary(model: LqModel, t: float, state: RiccatiState) -> AuxiliaryMatrices:
    """Assemble (U, V, S, Z, Y); positivity of U, V is not checked here."""
    model.check_time(t)
    U, V, S, Z, Y = _aux_arrays(model, t, state.Lam, state.Gam, state.gam)
    return AuxiliaryMatrices(U=U, V=V, S=S, Z=Z, Y=Y)


def checked_eigh(mat: np.ndarray, t: float, name: str):
    """Eigendecomposition that fails fast when the matrix is not safely
    positive definite (floor 1e-10, condition number cap 1e12)."""
    w, q = np.linalg.eigh(mat)
    if not np.isfinite(w).all():
        raise RiccatiBreakdownError(f"{name} non-finite at t={t:.6g}", time=t)
    lo = float(w[0])
    if lo < POSITIVITY_FLOOR:
        raise RiccatiBreakdownError(
            f"{name} loses positive definiteness at t={t:.6g} "
            f"(smallest eigenvalue {lo:.3e})", time=t, eigenvalue=lo)
    if float(w[-1]) / lo > CONDITION_LIMIT:
        raise RiccatiBreakdownError(
            f"{name} ill-conditioned at t={t:.6g} (cond {float(w[-1]) / lo:.3e})",
            time=t, eigenvalue=lo)
    return w, q


def spd_solve(w: np.ndarray, q: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve M x = rhs given the eigendecomposition (w, q) of SPD M."""
    if rhs.ndim == 1:
        return q @ ((q.T @ rhs) / w)
    return q @ ((q.T @ rhs) / w[:, None])


def _rhs_arrays(model: LqModel, t: float, L, G, g, c):
    dyn, cost = model.dynamics, model.cost
    B, Bb = dyn.B(t), dyn.Bbar(t)
    D, Db = dyn.D(t), dyn.Dbar(t)
    b0, s0 = dyn.b0(t), dyn.sigma0(t)
    Q2, Q2b = cost.Q2(t), cost.Q2bar(t)
    q1, q1b = cost.q1(t), cost.q1bar(t)
    BpB, DpD = B + Bb, D + Db
    U, V, S, Z, Y = _aux_arrays(model, t, L, G, g)
    wU, qU = checked_eigh(U, t, "U")
    wV, qV = checked_eigh(V, t, "V")
    Ui_St = spd_solve(wU, qU, S.T)
    Vi_Zt = spd_solve(wV, qV, Z.T)
    Vi_Y = spd_solve(wV, qV, Y)
    dL = -sym(Q2 + D.T @ L @ D + L @ B + B.T @ L - S @ Ui_St)
    dG = -sym(Q2 + Q2b + DpD.T @ L @ DpD + G @ BpB + BpB.T @ G - Z @ Vi_Zt)
    dg = -(BpB.T @ g - Z @ Vi_Y + q1 + q1b + 2.0 * DpD.T @ (L @ s0) + 2.0 * G @ b0)
    dc = -(-0.25 * (Y @ Vi_Y) + g @ b0 + s0 @ (L @ s0))
    return dL, dG, dg, float(dc)


def riccati_rhs(model: LqModel, t: float, state: RiccatiState) -> RiccatiState:
    """Forward-time derivatives (Lam', Gam', gam', chi') at (t, state)."""
    model.check_time(t)
    dL, dG, dg, dc = _rhs_arrays(model, t, state.Lam, state.Gam, state.gam, state.chi)
    return RiccatiState(Lam=dL, Gam=dG, gam=dg, chi=dc)


def default_step_count(horizon: float) -> int:
    return max(1000, math.ceil(horizon / 1e-3))


@dataclass(frozen=True)
class RiccatiSolution:
    """Grid states of the backward solve plus stored derivatives.

    Queries at grid times return the stored state bitwise; elsewhere a
    cubic Hermite interpolant built from the stored right-hand sides is
    used, and Lam, Gam are re-symmetrized after interpolation.
    """

    model: LqModel
    grid: np.ndarray
    step: float
    Lam: np.ndarray
    Gam: np.ndarray
    gam: np.ndarray
    chi: np.ndarray
    dLam: np.ndarray
    dGam: np.ndarray
    dgam: np.ndarray
    dchi: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def state(self, k: int) -> RiccatiState:
        return RiccatiState(Lam=self.Lam[k], Gam=self.Gam[k],
                            gam=self.gam[k], chi=float(self.chi[k]))

    def at(self, t: float) -> RiccatiState:
        grid = self.grid
        if t < grid[0] or t > grid[-1]:
            raise OutOfDomainError(f"t={t} outside [0, {grid[-1]}]")
        i = int(np.searchsorted(grid, t, side="right")) - 1
        if i >= grid.size - 1:
            return self.state(grid.size - 1)
        if t == grid[i]:
            return self.state(i)
        s = (t - grid[i]) / self.step
        h00 = (1.0 + 2.0 * s) * (1.0 - s) ** 2
        h10 = s * (1.0 - s) ** 2
        h01 = s * s * (3.0 - 2.0 * s)
        h11 = s * s * (s - 1.0)
        dt = self.step

        def hermite(y, dy):
            return (h00 * y[i] + h01 * y[i + 1]
                    + dt * (h10 * dy[i] + h11 * dy[i + 1]))

        return RiccatiState(
            Lam=sym(hermite(self.Lam, self.dLam)),
            Gam=sym(hermite(self.Gam, self.dGam)),
            gam=hermite(self.gam, self.dgam),
            chi=float(hermite(self.chi, self.dchi)),
        )


def solve_riccati(model: LqModel, n_steps: int | None = None) -> RiccatiSolution:
    """Integrate the terminal-value system backward with fixed-step RK4.

    Lam and Gam are re-symmetrized after every step; U and V are checked
    positive definite at every stage evaluation. Raises
    RiccatiBreakdownError carrying the failure time on positivity loss,
    ill-conditioning, or a non-finite state.
    """
    K = default_step_count(model.horizon) if n_steps is None else int(n_steps)
    if K < 1:
        raise ValueError("n_steps must be >= 1")
    T = model.horizon
    d = model.dims.d
    grid = np.linspace(0.0, T, K + 1)
    dt = T / K
    Lam = np.empty((K + 1, d, d))
    Gam = np.empty((K + 1, d, d))
    gam = np.empty((K + 1, d))
    chi = np.empty(K + 1)
    dLam = np.empty_like(Lam)
    dGam = np.empty_like(Gam)
    dgam = np.empty_like(gam)
    dchi = np.empty_like(chi)

    term = terminal_state(model)
    L, G, g, c = term.Lam, term.Gam, term.gam, term.chi
    Lam[K], Gam[K], gam[K], chi[K] = L, G, g, c
    f = _rhs_arrays(model, T, L, G, g, c)
    dLam[K], dGam[K], dgam[K], dchi[K] = f

    for k in range(K, 0, -1):
        t1, t0 = grid[k], grid[k - 1]
        tm = 0.5 * (t1 + t0)
        a1 = f
        a2 = _rhs_arrays(model, tm, L - 0.5 * dt * a1[0], G - 0.5 * dt * a1[1],
                         g - 0.5 * dt * a1[2], c - 0.5 * dt * a1[3])
        a3 = _rhs_arrays(model, tm, L - 0.5 * dt * a2[0], G - 0.5 * dt * a2[1],
                         g - 0.5 * dt * a2[2], c - 0.5 * dt * a2[3])
        a4 = _rhs_arrays(model, t0, L - dt * a3[0], G - dt * a3[1],
                         g - dt * a3[2], c - dt * a3[3])
        L = sym(L - dt / 6.0 * (a1[0] + 2.0 * a2[0] + 2.0 * a3[0] + a4[0]))
        G = sym(G - dt / 6.0 * (a1[1] + 2.0 * a2[1] + 2.0 * a3[1] + a4[1]))
        g = g - dt / 6.0 * (a1[2] + 2.0 * a2[2] + 2.0 * a3[2] + a4[2])
        c = c - dt / 6.0 * (a1[3] + 2.0 * a2[3] + 2.0 * a3[3] + a4[3])
        if not (np.isfinite(L).all() and np.isfinite(G).all()
                and np.isfinite(g).all() and math.isfinite(c)):
            raise RiccatiBreakdownError(
                f"non-finite Riccati state at t={t0:.6g}", time=float(t0))
        f = _rhs_arrays(model, t0, L, G, g, c)
        Lam[k - 1], Gam[k - 1], gam[k - 1], chi[k - 1] = L, G, g, c
        dLam[k - 1], dGam[k - 1], dgam[k - 1], dchi[k - 1] = f

    return RiccatiSolution(model=model, grid=grid, step=dt,
                           Lam=Lam, Gam=Gam, gam=gam, chi=chi,
                           dLam=dLam, dGam=dGam, dgam=dgam, dchi=dchi)


def with_scaled_lambda(sol: RiccatiSolution, factor: float) -> RiccatiSolution:
    """Copy of the solution with the Lam component (and its stored
    derivative) scaled — a fault-injection hook for battery self-tests."""
    return replace(sol, Lam=factor * sol.Lam, dLam=factor * sol.dLam)


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    first_violation: str | None = None


def check_standard_conditions(model: LqModel, margin: float) -> ConditionReport:
    """Check the sufficient-existence condition

        P2 >= 0, P2+P2bar >= 0, Q2(t) >= 0, Q2(t)+Q2bar(t) >= 0,
        R2(t) >= margin*I, R2(t)+R2bar(t) >= margin*I

    at every cost-schedule knot (plus t=0 and t=T). Informational only:
    the solver does not require it (the mean-variance example violates it
    and still solves).
    """
    if not margin > 0:
        raise ValueError("margin must be positive")
    c = model.cost

    def min_eig(mat) -> float:
        return float(np.linalg.eigvalsh(sym(mat))[0])

    if min_eig(c.P2) < -PSD_TOL:
        return ConditionReport(False, "P2 not positive semidefinite")
    if min_eig(c.P2 + c.P2bar) < -PSD_TOL:
        return ConditionReport(False, "P2 + P2bar not positive semidefinite")
    times = {0.0, model.horizon}
    for sched in (c.Q2, c.Q2bar, c.R2, c.R2bar):
        times.update(float(t) for t in sched.knot_times())
    for t in sorted(times):
        if min_eig(c.Q2(t)) < -PSD_TOL:
            return ConditionReport(False, f"Q2 not >= 0 at t={t:.6g}")
        if min_eig(c.Q2(t) + c.Q2bar(t)) < -PSD_TOL:
            return ConditionReport(False, f"Q2 + Q2bar not >= 0 at t={t:.6g}")
        if min_eig(c.R2(t)) < margin - PSD_TOL:
            return ConditionReport(False, f"R2 not >= {margin}*I at t={t:.6g}")
        if min_eig(c.R2(t) + c.R2bar(t)) < margin - PSD_TOL:
            return ConditionReport(
                False, f"R2 + R2bar not >= {margin}*I at t={t:.6g}")
    return ConditionReport(True)


def solution_to_csv(sol: RiccatiSolution, path) -> None:
    """One row per grid point, full round-trip decimal precision."""
    d = sol.model.dims.d
    cols = (["t"]
            + [f"Lambda_{i}{j}" for i in range(d) for j in range(d)]
            + [f"Gamma_{i}{j}" for i in range(d) for j in range(d)]
            + [f"gamma_{i}" for i in range(d)]
            + ["chi"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for k, t in enumerate(sol.grid):
            row = [t, *sol.Lam[k].ravel(), *sol.Gam[k].ravel(),
                   *sol.gam[k], sol.chi[k]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
