"""Deterministic propagation of (mean, covariance) under affine feedback.

Because drift and diffusion are affine in (x, a) and the feedback is
affine in (x, mean), the law's first two moments close exactly:

    a(x)   = K1 (x - m) + K2 m + k,          abar = K2 m + k
    m'     = (B + Bbar) m + (C + Cbar) abar + b0
    sigma(x) = G x + h,   G = D + F K1,
               h = sigma0 + Dbar m + F (K2 - K1) m + F k + Fbar abar
    Cov'   = A Cov + Cov A' + G Cov G' + (G m + h)(G m + h)',
             A = B + C K1

(the diffusion is an R^d vector on scalar noise, so its second-moment
contribution is E[sigma sigma'] = G Cov G' + (Gm+h)(Gm+h)'). The running
cost integral rides the same RK4 as an augmented component, which keeps
the quadrature at integrator order. This module is the noise-free oracle
for the value identity and the dynamic-programming check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CovarianceInstabilityError, OutOfDomainError
from .model import AffineFeedback, LqModel, MomentState, sym
from .riccati import RiccatiSolution
from .value import _f_hat_raw, g_hat, optimal_feedback
from .value import value as value_at

CLIP_FLOOR = -1e-9
INSTABILITY_FLOOR = -1e-6


@dataclass(frozen=True)
class MomentTrajectory:
    grid: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    running: np.ndarray
    clip_count: int

    def state(self, k: int) -> MomentState:
        return MomentState(self.means[k], self.covs[k])

    @property
    def final_state(self) -> MomentState:
        return self.state(self.grid.size - 1)

    @property
    def final_running(self) -> float:
        return float(self.running[-1])


def moment_rhs(model: LqModel, fb: AffineFeedback, t: float,
               ms: MomentState) -> tuple[np.ndarray, np.ndarray]:
    """(m', Cov') of the closed moment system at (t, ms)."""
    model.check_time(t)
    dm, dS, _ = _moment_rhs_raw(model, fb, t, ms.mean, ms.cov)
    return dm, dS


def _moment_rhs_raw(model: LqModel, fb: AffineFeedback, t: float, m, S):
    dyn = model.dynamics
    K1, K2, k0 = fb.gains(t)
    B, Bb = dyn.B(t), dyn.Bbar(t)
    C, Cb = dyn.C(t), dyn.Cbar(t)
    D, Db = dyn.D(t), dyn.Dbar(t)
    F, Fb = dyn.F(t), dyn.Fbar(t)
    abar = K2 @ m + k0
    dm = (B + Bb) @ m + (C + Cb) @ abar + dyn.b0(t)
    A = B + C @ K1
    G = D + F @ K1
    h = dyn.sigma0(t) + Db @ m + F @ ((K2 - K1) @ m + k0) + Fb @ abar
    gm = G @ m + h
    dS = A @ S + S @ A.T + G @ S @ G.T + np.outer(gm, gm)
    dr = _f_hat_raw(model, t, K1, K2, k0, m, S)
    return dm, dS, dr


def propagate_moments(model: LqModel, fb: AffineFeedback, t0: float,
                      ms0: MomentState, n_steps: int,
                      t_end: float | None = None) -> MomentTrajectory:
    """RK4 integration of the moment system on [t0, t_end] (default T),
    accumulating the running cost as an augmented state component.

    The covariance is re-symmetrized every step and eigenvalue-clipped at
    -1e-9; clipping beyond -1e-6 raises CovarianceInstabilityError.
    """
    model.check_time(t0)
    T = model.horizon if t_end is None else float(t_end)
    model.check_time(T)
    if T < t0:
        raise OutOfDomainError(f"end time {T} before start {t0}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    d = model.dims.d
    grid = np.linspace(t0, T, n_steps + 1)
    dt = (T - t0) / n_steps
    means = np.empty((n_steps + 1, d))
    covs = np.empty((n_steps + 1, d, d))
    running = np.empty(n_steps + 1)
    m, S, r = ms0.mean.copy(), ms0.cov.copy(), 0.0
    means[0], covs[0], running[0] = m, S, r
    clip_count = 0
    if T == t0:
        return MomentTrajectory(grid=grid[:1], means=means[:1], covs=covs[:1],
                                running=running[:1], clip_count=0)
    for k in range(n_steps):
        t1, t2 = grid[k], grid[k + 1]
        tm = 0.5 * (t1 + t2)
        a1 = _moment_rhs_raw(model, fb, t1, m, S)
        a2 = _moment_rhs_raw(model, fb, tm, m + 0.5 * dt * a1[0], S + 0.5 * dt * a1[1])
        a3 = _moment_rhs_raw(model, fb, tm, m + 0.5 * dt * a2[0], S + 0.5 * dt * a2[1])
        a4 = _moment_rhs_raw(model, fb, t2, m + dt * a3[0], S + dt * a3[1])
        m = m + dt / 6.0 * (a1[0] + 2.0 * a2[0] + 2.0 * a3[0] + a4[0])
        S = sym(S + dt / 6.0 * (a1[1] + 2.0 * a2[1] + 2.0 * a3[1] + a4[1]))
        r = r + dt / 6.0 * (a1[2] + 2.0 * a2[2] + 2.0 * a3[2] + a4[2])
        w, q = np.linalg.eigh(S)
        lo = float(w[0])
        if lo < INSTABILITY_FLOOR:
            raise CovarianceInstabilityError(
                f"covariance eigenvalue {lo:.3e} at t={t2:.6g}",
                time=float(t2), eigenvalue=lo)
        if lo < CLIP_FLOOR:
            clip_count += 1
        if lo < 0.0:
            S = sym((q * np.maximum(w, 0.0)) @ q.T)
        means[k + 1], covs[k + 1], running[k + 1] = m, S, r
    return MomentTrajectory(grid=grid, means=means, covs=covs,
                            running=running, clip_count=clip_count)


def cost_from_moments(model: LqModel, fb: AffineFeedback, t0: float,
                      ms0: MomentState, n_steps: int) -> float:
    """Total cost of the feedback from (t0, ms0): accumulated running cost
    plus the lifted terminal cost at the propagated final law."""
    traj = propagate_moments(model, fb, t0, ms0, n_steps)
    return traj.final_running + g_hat(model, traj.final_state)


def dpp_check(model: LqModel, sol: RiccatiSolution, t: float, theta: float,
              ms: MomentState, n_steps: int) -> float:
    """Residual of the dynamic-programming split at the intermediate time:

        |value(t, ms) - running cost on [t, theta] - value(theta, law_theta)|

    propagated under the optimal feedback, for which the split holds with
    equality. Zero for the exact flow; numerically bounded by the
    integrator order.
    """
    if theta < t:
        raise OutOfDomainError(f"need t <= theta, got t={t}, theta={theta}")
    if theta == t:
        return 0.0
    fb = optimal_feedback(model, sol)
    traj = propagate_moments(model, fb, t, ms, n_steps, t_end=theta)
    return abs(value_at(sol, t, ms) - traj.final_running
               - value_at(sol, theta, traj.final_state))


def trajectory_to_csv(traj: MomentTrajectory, path) -> None:
    d = traj.means.shape[1]
    cols = (["t"] + [f"m_{i}" for i in range(d)]
            + [f"Sigma_{i}{j}" for i in range(d) for j in range(d)]
            + ["running"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for k, t in enumerate(traj.grid):
            row = [t, *traj.means[k], *traj.covs[k].ravel(), traj.running[k]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
