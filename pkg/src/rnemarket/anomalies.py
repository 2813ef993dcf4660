"""Closed-form cohort curves and mixture ratios for the ideal market.

Conditioning events are belief levels {Pi_t = v} of the priced change
probability. Everything here is analytic: occupancy densities come from the
Normal law of the log-LR through the logistic change of variable, momentum
and low-risk curves from the conserved-K belief maps, and the sign-mix
ratios from Gaussian density ratios at shifted event levels. The market
simulator measures the same objects empirically; tests confront the two.

Conventions: v is a probability level; the "fold" pairs v with 1-v for
volatility conditioning since sqrt(v(1-v)) cannot tell them apart. rho is
the status-quo bias (true odds over reference-prior odds), K the risk
loading, S_delta the log-value impact of the change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import expit, logit
from scipy.stats import norm

from .inference import InputError, Milestones

__all__ = [
    "AnomalyParams",
    "CohortCurve",
    "true_change_prob",
    "momentum_excess",
    "momentum_peak",
    "momentum_pair_profit",
    "event_likelihood_ratio",
    "momentum_mix",
    "vol_mix",
    "occupancy_density",
    "vol_conditioned_excess",
    "lowrisk_peak",
    "analytic_curve",
    "peak_report",
    "bin_averaged_momentum",
]


@dataclass(frozen=True)
class AnomalyParams:
    """Parameter bundle for analytic curves at one evaluation epoch t.

    H_p is the objective hurdle log((1-p1_0)/p1_0); the data clock enters
    only through the milestone-to-epoch ratios, which the properties expose.
    """

    rho: float
    K: float
    S_delta: float
    H_p: float
    sigma_l: float
    t: float
    eps_p: float = 0.2
    M_rho: float = 5.0

    def __post_init__(self) -> None:
        if self.rho <= 0:
            raise InputError("rho must be positive")
        if self.K < 1:
            raise InputError("K must be >= 1")
        if self.S_delta <= 0:
            raise InputError("S_delta must be positive")
        if self.sigma_l <= 0:
            raise InputError("sigma_l must be positive")
        if self.t <= 0:
            raise InputError("t must be positive")

    @classmethod
    def from_primitives(
        cls,
        p1_0: float,
        rho: float,
        K: float,
        sigma_l: float,
        t: float,
        S_delta: float = 1.0,
        **kw,
    ) -> "AnomalyParams":
        if not 0 < p1_0 < 1:
            raise InputError("p1_0 must lie in (0,1)")
        return cls(rho=rho, K=K, S_delta=S_delta, H_p=float(-logit(p1_0)),
                   sigma_l=sigma_l, t=t, **kw)

    @property
    def p1_0(self) -> float:
        return float(expit(-self.H_p))

    @property
    def t_p(self) -> float:
        return self.H_p / (self.sigma_l**2 / 2)

    @property
    def t_rho(self) -> float:
        return math.log(self.rho) / (self.sigma_l**2 / 2)

    @property
    def t_K(self) -> float:
        return math.log(self.K) / (self.sigma_l**2 / 2)

    @property
    def objective_dominated(self) -> bool:
        return self.t_p / self.t <= self.eps_p

    @property
    def bias_dominant(self) -> bool:
        return self.t_rho / self.t >= self.M_rho

    @property
    def in_window(self) -> bool:
        return self.objective_dominated and self.bias_dominant


@dataclass
class CohortCurve:
    """One cohort curve: levels v, mean excess rp, and occupancy.

    n carries counts for empirical curves and analytic weights otherwise;
    se and mix are empirical-only. low_confidence marks points kept but not
    trusted (thin bins). Levels must increase; volatility curves live on
    (0, 1/2].
    """

    kind: str
    v: np.ndarray
    rp: np.ndarray
    n: np.ndarray
    se: np.ndarray | None = None
    mix: np.ndarray | None = None
    low_confidence: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    VALID_KINDS = ("momentum_plus", "momentum_minus", "volatility")

    def __post_init__(self) -> None:
        if self.kind not in self.VALID_KINDS:
            raise InputError(f"unknown curve kind {self.kind!r}")
        self.v = np.asarray(self.v, float)
        self.rp = np.asarray(self.rp, float)
        self.n = np.asarray(self.n, float)
        if np.any(np.diff(self.v) <= 0):
            raise InputError("curve levels must be strictly increasing")
        if self.kind == "volatility" and np.any(self.v > 0.5 + 1e-12):
            raise InputError("volatility curves are defined on (0, 1/2]")


def true_change_prob(v, sign_change: int, rho: float, K: float):
    """Objective change probability on the event {Pi_t = v} with given sign.

    The event pins the log-LR, and the true posterior differs from the
    priced belief only through the prior odds gap rho*K^sign.
    """
    return expit(logit(v) + math.log(rho) + sign_change * math.log(K))


def momentum_excess(v, sign_change: int, rho: float, K: float, S_delta: float):
    """Mean excess earned on {Pi_t = v} cohorts of one sign.

    Equals sign*(true_change_prob - v)*S_delta, written in the discounted
    form with a = 1/(rho*K^sign); vanishes at rho=K=1 and under the
    label switch (v, sign, rho) -> (1-v, -sign, 1/rho).
    """
    if rho <= 0:
        raise InputError("rho must be positive")
    if sign_change not in (1, -1):
        raise InputError("sign_change must be +1 or -1")
    v = np.asarray(v, float)
    a = 1.0 / (rho * K**sign_change)
    return sign_change * v * (1 - v) * (1 - a) / (v + (1 - v) * a) * S_delta


def momentum_peak(rho: float, K: float, S_delta: float, sign_change: int) -> tuple[float, float]:
    """Location and size of the best momentum excess for one sign branch."""
    if rho <= 0:
        raise InputError("rho must be positive")
    if sign_change not in (1, -1):
        raise InputError("sign_change must be +1 or -1")
    root = math.sqrt(rho * K**sign_change)
    v_max = 1.0 / (root + 1.0)
    rp_max = sign_change * (root - 1.0) / (root + 1.0) * S_delta
    return v_max, rp_max


def momentum_pair_profit(rho: float, K: float, S_delta: float) -> float:
    """Peak profitability of the long-plus/short-minus momentum pair."""
    _, rp_plus = momentum_peak(rho, K, S_delta, 1)
    _, rp_minus = momentum_peak(rho, K, S_delta, -1)
    return 0.5 * (rp_plus - rp_minus)


def _check_outcome(B: int) -> None:
    if B not in (0, 1):
        raise InputError("B must be 0 or 1")


def event_lr_from_ratio(v, tPi_over_t: float, B: int):
    v = np.asarray(v, float)
    return ((1 - v) / v) ** (-tPi_over_t - (-1) ** B)


def event_likelihood_ratio(v, t: float, m: Milestones, sign_change: int, B: int):
    """Density ratio of the mirrored event {Pi_t = 1-v} to {Pi_t = v}.

    Conditional on the sign of the potential change and the outcome B. Far
    below 1 in the bias-dominant regime: mirrored events barely occur.
    """
    _check_outcome(B)
    if sign_change not in (1, -1):
        raise InputError("sign_change must be +1 or -1")
    tPi = m.t_Pi_plus if sign_change == 1 else m.t_Pi_minus
    return event_lr_from_ratio(v, tPi / t, B)


def momentum_mix_from_ratios(v, rho: float, K: float, tK_over_t: float, tp_over_t: float, B: int):
    v = np.asarray(v, float)
    return (rho * v / (1 - v)) ** (-tK_over_t) * K ** (-tp_over_t - (-1) ** B)


def momentum_mix(v, t: float, m: Milestones, rho: float, K: float, B: int):
    """Sign mix P(+|v)/P(-|v) on the cohort {Pi_t = v}, given outcome B.

    With a symmetric unconditional sign mix this is the density ratio of
    the event under the two signs; it departs from 1 only through K.
    """
    _check_outcome(B)
    return momentum_mix_from_ratios(v, rho, K, m.t_K / t, m.t_p / t, B)


def vol_mix(v, t: float, m: Milestones, rho: float, K: float, B: int):
    """Sign mix of the folded volatility cohort {Pi_t = v} U {Pi_t = 1-v}."""
    _check_outcome(B)
    v = np.asarray(v, float)
    if np.any(v > 0.5 + 1e-12):
        raise InputError("volatility levels live on (0, 1/2]")
    M = momentum_mix(v, t, m, rho, K, B)
    R_plus = event_likelihood_ratio(v, t, m, 1, B)
    R_minus = event_likelihood_ratio(v, t, m, -1, B)
    return M * (1 + R_plus) / (1 + R_minus)


def _event_loglevel(v, sign_change: int, params: AnomalyParams):
    return params.H_p + math.log(params.rho) + sign_change * math.log(params.K) + logit(v)


def _log_occupancy(v, sign_change: int, params: AnomalyParams):
    """log density of Pi_t at v for one sign, mixing B with true weights."""
    v = np.asarray(v, float)
    level = _event_loglevel(v, sign_change, params)
    sd = params.sigma_l * math.sqrt(params.t)
    half_var = params.sigma_l**2 * params.t / 2.0
    w1 = params.p1_0
    la = np.log(w1) + norm.logpdf(level, loc=half_var, scale=sd)
    lb = np.log1p(-w1) + norm.logpdf(level, loc=-half_var, scale=sd)
    return np.logaddexp(la, lb) - np.log(v * (1 - v))


def occupancy_density(v, sign_change: int, params: AnomalyParams):
    """Density of the priced belief level at epoch t for one sign branch."""
    if sign_change not in (1, -1):
        raise InputError("sign_change must be +1 or -1")
    return np.exp(_log_occupancy(v, sign_change, params))


def _balanced_arm(u, params: AnomalyParams):
    """Half-sum of the two sign branches' excess at one level u.

    The level terms cancel between the branches, leaving a pure gap of true
    change probabilities; this is the piece whose maximum sits at
    v = 1/(rho+1) with size (K-1)/(2(K+1))*S_delta.
    """
    x = logit(np.asarray(u, float)) + math.log(params.rho)
    kappa = math.log(params.K)
    return 0.5 * (expit(x + kappa) - expit(x - kappa)) * params.S_delta


def _log_folded_weight(u, params: AnomalyParams):
    lp = _log_occupancy(u, 1, params)
    lm = _log_occupancy(u, -1, params)
    return np.logaddexp(lp, lm) - math.log(2.0)


def vol_conditioned_excess(v, params: AnomalyParams):
    """Mean excess of the folded volatility cohort at level v in (0, 1/2].

    Averages the per-sign excesses over the cohort members: a half/half
    sign mix on each side of the fold (the unconditional mix), with the two
    sides weighted by their occupancy. The mirrored side's weight is
    exponentially small in the bias-dominant regime, so the curve is the
    balanced arm up to tiny corrections and peaks near 1/(rho+1).
    """
    v = np.asarray(v, float)
    if np.any((v <= 0) | (v > 0.5 + 1e-12)):
        raise InputError("volatility levels live on (0, 1/2]")
    v = np.minimum(v, 0.5)
    if params.K == 1.0:
        return np.zeros_like(v)
    lw_lo = _log_folded_weight(v, params)
    lw_hi = _log_folded_weight(1 - v, params)
    w_lo = expit(lw_lo - lw_hi)
    return w_lo * _balanced_arm(v, params) + (1 - w_lo) * _balanced_arm(1 - v, params)


def lowrisk_peak(rho: float, K: float, S_delta: float) -> tuple[float, float]:
    """Peak location and size of the volatility-conditioned excess curve.

    Exact at rho=1; for rho >> 1 the leading-order error of the location is
    O((K-1)*H_p/(sigma_l^2 t)). Inputs with rho < 1 are label-switched to
    their mirrored equivalent first.
    """
    if rho <= 0:
        raise InputError("rho must be positive")
    if K < 1:
        raise InputError("K must be >= 1")
    if rho < 1:
        rho = 1.0 / rho
    v_max = 1.0 / (rho + 1.0)
    rp_max = 0.5 * (K - 1.0) / (K + 1.0) * S_delta
    return v_max, rp_max


def default_grid(kind: str, step: float = 1e-3) -> np.ndarray:
    if kind == "volatility":
        return np.arange(step, 0.5 + step / 2, step)
    return np.arange(step, 1.0, step)


def analytic_curve(kind: str, params: AnomalyParams, grid=None) -> CohortCurve:
    """Evaluate one analytic cohort curve on a level grid.

    The n column carries occupancy weights: the per-sign level density for
    momentum curves, the folded unconditional density for volatility.
    """
    if grid is None:
        grid = default_grid(kind)
    grid = np.asarray(grid, float)
    if kind == "momentum_plus":
        rp = momentum_excess(grid, 1, params.rho, params.K, params.S_delta)
        w = occupancy_density(grid, 1, params)
    elif kind == "momentum_minus":
        rp = momentum_excess(grid, -1, params.rho, params.K, params.S_delta)
        w = occupancy_density(grid, -1, params)
    elif kind == "volatility":
        rp = vol_conditioned_excess(grid, params)
        w = np.exp(_log_folded_weight(grid, params)) + np.exp(
            _log_folded_weight(1 - grid, params)
        )
    else:
        raise InputError(f"unknown curve kind {kind!r}")
    return CohortCurve(kind=kind, v=grid, rp=rp, n=w)


def _curve_values(kind: str, params: AnomalyParams, grid: np.ndarray) -> np.ndarray:
    if kind == "momentum_plus":
        return momentum_excess(grid, 1, params.rho, params.K, params.S_delta)
    if kind == "momentum_minus":
        return momentum_excess(grid, -1, params.rho, params.K, params.S_delta)
    if kind == "volatility":
        return vol_conditioned_excess(grid, params)
    raise InputError(f"unknown curve kind {kind!r}")


def peak_report(kind: str, params: AnomalyParams, step: float = 1e-3, refine: float = 1e-4) -> dict:
    """Grid argmax of a curve, refined near the peak, against the closed form.

    Oriented curves (the minus branch peaks downward) are searched on
    sign-adjusted values. Returns the refined location/value plus the
    formula value and their absolute gap.
    """
    grid = default_grid(kind, step)
    orient = -1.0 if kind == "momentum_minus" else 1.0
    vals = orient * _curve_values(kind, params, grid)
    i = int(np.argmax(vals))
    lo = max(grid[0], grid[i] - 2 * step)
    hi = min(grid[-1], grid[i] + 2 * step)
    fine = np.arange(lo, hi + refine / 2, refine)
    fvals = orient * _curve_values(kind, params, fine)
    j = int(np.argmax(fvals))
    v_grid, rp_grid = float(fine[j]), float(orient * fvals[j])
    if kind == "volatility":
        v_formula, rp_formula = lowrisk_peak(params.rho, params.K, params.S_delta)
    else:
        sign = 1 if kind == "momentum_plus" else -1
        v_formula, rp_formula = momentum_peak(params.rho, params.K, params.S_delta, sign)
    return {
        "kind": kind,
        "v_max": v_grid,
        "rp_max": rp_grid,
        "formula_value": rp_formula,
        "grid_value": rp_grid,
        "abs_gap": abs(rp_formula - rp_grid),
        "v_formula": v_formula,
        "v_abs_gap": abs(v_formula - v_grid),
    }


def bin_averaged_momentum(edges, sign_change: int, params: AnomalyParams):
    """Expected measured excess per momentum bin under the level density.

    The empirical estimator scores members against the bin center c, so its
    expectation is sign*(density-weighted mean of the true change prob - c).
    Returns (centers, expected rp, bin occupancy mass given the sign).
    """
    edges = np.asarray(edges, float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise InputError("edges must be an increasing 1-d array")
    centers = 0.5 * (edges[:-1] + edges[1:])
    rp = np.empty(len(centers))
    mass = np.empty(len(centers))

    def dens(u):
        return occupancy_density(u, sign_change, params)

    def dens_p(u):
        return dens(u) * true_change_prob(u, sign_change, params.rho, params.K)

    for b in range(len(centers)):
        lo, hi = edges[b], edges[b + 1]
        lo = max(lo, 1e-12)
        hi = min(hi, 1 - 1e-12)
        m, _ = quad(dens, lo, hi, limit=200)
        mp, _ = quad(dens_p, lo, hi, limit=200)
        mass[b] = m
        if m > 0:
            rp[b] = sign_change * (mp / m - centers[b]) * params.S_delta
        else:
            rp[b] = np.nan
    return centers, rp, mass
