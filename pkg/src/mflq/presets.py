"""Preset models and closed-form references.

Two classical mean-field LQ problems from finance:

* mean-variance portfolio selection — minimize (eta/2) Var(X_T) - E[X_T]
  for wealth dX = r X dt + a (rho dt + vol dB); admits fully explicit
  value coefficients and control;
* inter-bank systemic risk — log-reserves mean-revert to the market
  average at rate kappa, each bank controls its lending rate a against a
  quadratic incentive (q) and penalties (eta running, c terminal); the
  first-order coefficients vanish and the quadratic one solves a scalar
  Riccati equation.

The systemic quadratic coefficient is referenced against a high-accuracy
adaptive integration of its scalar ODE (tolerance 1e-12). A tanh-type
closed form exists but is easy to mis-transcribe (sign conventions differ
across sources), so the ODE integration is the ground truth here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, solve_ivp

from .errors import MflqError, OutOfDomainError
from .model import LqModel, lq_model
from .riccati import RiccatiSolution, RiccatiState
from .schedules import Schedule, as_schedule

QUAD_TOL = 1e-12


def _scalar_schedule(value) -> Schedule:
    return value if isinstance(value, Schedule) else as_schedule(float(value), (1, 1))


def _at(s: Schedule, t: float) -> float:
    return float(s(t).reshape(-1)[0])


def _integral(fn, a: float, b: float, knots=()) -> float:
    """Integral of a scalar function on [a, b]; exact when fn is constant
    (no knots means every underlying schedule is a constant)."""
    if b <= a:
        return 0.0
    if not knots:
        return fn(0.5 * (a + b)) * (b - a)
    pts = [float(k) for k in knots if a < float(k) < b]
    val, _ = quad(fn, a, b, points=pts or None, epsabs=QUAD_TOL,
                  epsrel=QUAD_TOL, limit=200)
    return val


@dataclass(frozen=True)
class MeanVarianceParams:
    """Interest rate r, excess return rho, volatility vol (scalars or 1x1
    schedules), risk aversion eta > 0, initial wealth x0, horizon T."""

    r: object = 0.0
    rho: object = 1.0
    vol: object = 1.0
    eta: float = 2.0
    x0: float = 1.0
    horizon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "r", _scalar_schedule(self.r))
        object.__setattr__(self, "rho", _scalar_schedule(self.rho))
        object.__setattr__(self, "vol", _scalar_schedule(self.vol))
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        vols = ([self.vol.value] if self.vol.is_constant else list(self.vol.values))
        if any(v.reshape(-1)[0] <= 0 for v in vols):
            raise ValueError("vol must be positive on [0, T]")

    def _knots(self):
        out = set()
        for s in (self.r, self.rho, self.vol):
            out.update(float(t) for t in s.knot_times())
        return sorted(out)

    def rate(self, t: float) -> float:
        return _at(self.r, t)

    def sharpe_sq(self, t: float) -> float:
        """rho(t)^2 / vol(t)^2."""
        return (_at(self.rho, t) / _at(self.vol, t)) ** 2


def mean_variance_model(p: MeanVarianceParams) -> LqModel:
    """LQ coefficients of the mean-variance problem: B=r, C=rho, F=vol,
    P2=eta/2, P2bar=-eta/2, p1bar=-1, everything else zero."""
    return lq_model(
        d=1, m=1, horizon=p.horizon,
        B=p.r, C=p.rho, F=p.vol,
        P2=p.eta / 2.0, P2bar=-p.eta / 2.0, p1bar=np.array([-1.0]),
    )


def mean_variance_closed_form(p: MeanVarianceParams, t: float) -> RiccatiState:
    """Explicit value coefficients:

        Lam(t) = eta/2 * exp(int_t^T 2r - rho^2/vol^2)
        Gam(t) = 0
        gam(t) = -exp(int_t^T r)
        chi(t) = -(1/2 eta) [exp(int_t^T rho^2/vol^2) - 1]
    """
    T = p.horizon
    if not 0.0 <= t <= T:
        raise OutOfDomainError(f"t={t} outside [0, {T}]")
    knots = p._knots()
    int_r = _integral(p.rate, t, T, knots)
    int_s = _integral(p.sharpe_sq, t, T, knots)
    lam = 0.5 * p.eta * math.exp(2.0 * int_r - int_s)
    gam = -math.exp(int_r)
    chi = -(math.expm1(int_s)) / (2.0 * p.eta)
    return RiccatiState(Lam=np.array([[lam]]), Gam=np.zeros((1, 1)),
                        gam=np.array([gam]), chi=chi)


def mean_variance_optimal_control(p: MeanVarianceParams, t: float,
                                  x: float, mean_x: float) -> float:
    """-(rho/vol^2)(x - mean) + (rho/(eta vol^2)) exp(int_t^T rho^2/vol^2 - r)."""
    T = p.horizon
    if not 0.0 <= t <= T:
        raise OutOfDomainError(f"t={t} outside [0, {T}]")
    knots = p._knots()
    rho, v2 = _at(p.rho, t), _at(p.vol, t) ** 2
    expo = math.exp(_integral(p.sharpe_sq, t, T, knots) - _integral(p.rate, t, T, knots))
    return -(rho / v2) * (x - mean_x) + rho / (p.eta * v2) * expo


def mean_variance_mean_trajectory(p: MeanVarianceParams, t: float) -> float:
    """Mean of the optimally controlled wealth:

        E[X_t] = x0 exp(int_0^t r)
               + (1/eta) exp(int_t^T rho^2/vol^2 - r) (exp(int_0^t rho^2/vol^2) - 1)
    """
    T = p.horizon
    if not 0.0 <= t <= T:
        raise OutOfDomainError(f"t={t} outside [0, {T}]")
    knots = p._knots()
    growth = math.exp(_integral(p.rate, 0.0, t, knots))
    tail = math.exp(_integral(p.sharpe_sq, t, T, knots) - _integral(p.rate, t, T, knots))
    return p.x0 * growth + math.expm1(_integral(p.sharpe_sq, 0.0, t, knots)) * tail / p.eta


@dataclass(frozen=True)
class SystemicParams:
    """Mean-reversion kappa >= 0, volatility sigma > 0, lending incentive
    q > 0, running penalty eta > 0, terminal penalty c >= 0."""

    kappa: float = 0.5
    sigma: float = 1.0
    q: float = 0.5
    eta: float = 1.0
    c: float = 0.0
    x0: float = 1.0
    horizon: float = 1.0

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.q > 0:
            raise ValueError("q must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if (self.kappa + self.q) ** 2 + (self.eta - self.q ** 2) < 0:
            raise ValueError("(kappa+q)^2 + (eta - q^2) must be nonnegative")


def systemic_model(p: SystemicParams) -> LqModel:
    """LQ coefficients of the inter-bank model: B=-kappa, Bbar=kappa, C=1,
    sigma0=sigma, Q2=eta/2, Q2bar=-eta/2, R2=1/2, M2=q/2, M2bar=-q/2,
    P2=c/2, P2bar=-c/2, everything else zero."""
    return lq_model(
        d=1, m=1, horizon=p.horizon,
        B=-p.kappa, Bbar=p.kappa, C=1.0, sigma0=np.array([p.sigma]),
        Q2=p.eta / 2.0, Q2bar=-p.eta / 2.0, R2=0.5,
        M2=p.q / 2.0, M2bar=-p.q / 2.0,
        P2=p.c / 2.0, P2bar=-p.c / 2.0,
    )


def systemic_delta(p: SystemicParams) -> tuple[float, float]:
    """Roots delta_+/- = -(kappa+q) +- sqrt((kappa+q)^2 + (eta - q^2))."""
    disc = (p.kappa + p.q) ** 2 + (p.eta - p.q ** 2)
    if disc < 0:
        raise ValueError(f"negative discriminant {disc}")
    root = math.sqrt(disc)
    return -(p.kappa + p.q) + root, -(p.kappa + p.q) - root


class LambdaBlowUpError(MflqError):
    """The scalar reference ODE diverged before reaching the query time."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


def systemic_lambda_reference(p: SystemicParams, t):
    """Ground-truth quadratic coefficient from adaptive backward
    integration (tolerance 1e-12) of

        Lam' = 2(kappa+q) Lam + 2 Lam^2 + (q^2 - eta)/2,   Lam(T) = c/2.

    ``t`` may be a scalar or an array of times in [0, T]; the return
    matches the input shape.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    scalar = np.ndim(t) == 0
    T = p.horizon
    if ts.size == 0:
        return ts
    if ts.min() < 0.0 or ts.max() > T:
        raise OutOfDomainError(f"times outside [0, {T}]")
    kq, rhs_const = p.kappa + p.q, 0.5 * (p.q ** 2 - p.eta)

    def rhs(_t, y):
        return 2.0 * kq * y + 2.0 * y * y + rhs_const

    def exploding(_t, y):
        return abs(y[0]) - 1e8

    exploding.terminal = True
    values = {T: 0.5 * p.c}
    below = sorted({float(u) for u in ts if u < T}, reverse=True)
    if below:
        res = solve_ivp(rhs, (T, below[-1]), [0.5 * p.c], method="DOP853",
                        t_eval=np.asarray(below), rtol=1e-12, atol=1e-14,
                        events=exploding)
        if res.status == 1:  # event: blow-up before reaching the query time
            raise LambdaBlowUpError(
                f"reference solution blows up near t={res.t_events[0][0]:.6g}",
                time=float(res.t_events[0][0]))
        if not res.success:
            raise MflqError(f"reference integration failed: {res.message}")
        values.update(zip(res.t, res.y[0]))
    out = np.array([values[float(u)] for u in ts])
    return float(out[0]) if scalar else out.reshape(np.shape(t))


def systemic_optimal_control(p: SystemicParams, sol: RiccatiSolution,
                             t: float, x: float, mean_x: float) -> float:
    """-(2 Lam(t) + q)(x - mean_x) with Lam from the engine solution."""
    lam = float(sol.at(t).Lam[0, 0])
    return -(2.0 * lam + p.q) * (x - mean_x)


# ---------------------------------------------------------------------------
# registry used by the CLI

PRESET_NAMES = ("mean-variance", "systemic-risk")


def build_preset(name: str, overrides: dict | None = None):
    """Return (model, params) for a named preset with parameter overrides.

    Mean-variance accepts r, rho, vol, eta, x0, T; systemic-risk accepts
    kappa, sigma, q, eta, c, x0, T.
    """
    kw = dict(overrides or {})
    if "T" in kw:
        kw["horizon"] = kw.pop("T")
    if name == "mean-variance":
        params = MeanVarianceParams(**kw)
        return mean_variance_model(params), params
    if name == "systemic-risk":
        params = SystemicParams(**kw)
        return systemic_model(params), params
    raise ValueError(f"unknown preset '{name}' (choose from {PRESET_NAMES})")
