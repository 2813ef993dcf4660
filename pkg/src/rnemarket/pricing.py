"""Canonical pricing of a binary change-risk under a conserved risk loading.

The pricing belief Pi is tied to the inference belief pi through a constant
odds discount K: O(pi)/O(Pi) = K^sign at every instant, where sign says
whether the change would raise (+1) or lower (-1) the asset's value. Prices
are carried in log-value units and decompose as

    S_t = y_minus_t + S_delta * Pi_up_t - premium_to_go_t,

with y_minus the sure value of the lower branch and Pi_up the pricing
probability of the upper branch. Stepping is exact: beliefs jump with the
simulated log-LR and the price is rebuilt canonically, so the conserved
ratio and the price identity hold to machine precision at every step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .inference import InferenceParams, InputError, posterior_from_loglr

__all__ = [
    "PricingParams",
    "PriceState",
    "PricePath",
    "PremiumDecomposition",
    "rne_belief",
    "price_of_model_risk",
    "canonical_price",
    "premium_decomposition",
    "initial_price_state",
    "price_sde_step",
    "simulate_price_path",
    "diffusion_price_of_risk",
    "verify_canonical_ode",
    "write_price_paths_csv",
]


@dataclass(frozen=True)
class PricingParams:
    """Static pricing inputs for one asset class.

    K: odds discount applied to the adverse branch; K=1 prices the change
        risk as diversifiable.
    sign_change: +1 when the change raises log-value, -1 when it lowers it.
    S_delta: log-value gap between the two sure valuations, constant unless
        rZ_delta decays it.
    pi0: inference prior of the change.
    bsure_premium_drift: premium earned per unit time while the risk is
        unresolved (paid back through the premium-to-go term).
    rZ_delta: decay rate of S_delta; couples to the Z-stream drift.
    sigma_Z: volatility of the sure-value anchor.
    """

    K: float = 1.5
    sign_change: int = 1
    S_delta: float = 1.0
    pi0: float = 0.5
    bsure_premium_drift: float = 0.0
    rZ_delta: float = 0.0
    sigma_Z: float = 0.0
    y_minus0: float = 0.0
    t_max: float = 10.0

    def __post_init__(self) -> None:
        if self.K < 1:
            raise InputError("K must be >= 1")
        if self.sign_change not in (1, -1):
            raise InputError("sign_change must be +1 or -1")
        if self.S_delta <= 0:
            raise InputError("S_delta must be positive")
        if not 0 < self.pi0 < 1:
            raise InputError("pi0 must lie in (0,1)")
        if self.bsure_premium_drift < 0 or self.rZ_delta < 0 or self.sigma_Z < 0:
            raise InputError("premium drift, rZ_delta and sigma_Z must be nonnegative")
        if self.rZ_delta * self.t_max >= self.S_delta:
            raise InputError("rZ_delta would exhaust S_delta before t_max")

    def check_consistent(self, inf: InferenceParams) -> None:
        """The Z-stream's signal-to-noise is pinned once both legs are live."""
        if self.rZ_delta > 0 and self.sigma_Z > 0:
            implied = self.rZ_delta / self.sigma_Z
            if abs(implied - inf.sigma_lZ) > 1e-12:
                raise InputError(
                    f"sigma_lZ={inf.sigma_lZ} inconsistent with rZ_delta/sigma_Z={implied}"
                )

    def s_delta_at(self, t: float) -> float:
        return self.S_delta - self.rZ_delta * t

    def premium_to_go(self, t: float) -> float:
        return self.bsure_premium_drift * (self.t_max - t)


@dataclass(frozen=True)
class PriceState:
    t: float
    loglr: float
    pi: float
    Pi: float
    y_minus: float
    S: float


@dataclass(frozen=True)
class PremiumDecomposition:
    total_rp: float
    bsure_part: float
    model_part: float
    price_of_model_risk: float
    expost_gap: float | None = None


def rne_belief(pi, K: float, sign_change: int):
    """Pricing belief with odds discounted by K^sign relative to pi.

    Monotone in pi; the log-odds gap is exactly -sign*log(K), which is what
    makes the odds ratio a conserved quantity along any data path.
    """
    if K < 1:
        raise InputError("K must be >= 1")
    if sign_change not in (1, -1):
        raise InputError("sign_change must be +1 or -1")
    return expit(logit(pi) - sign_change * math.log(K))


def price_of_model_risk(Pi, K: float):
    """Premium per unit of intrinsic risk dispersion: (sqrt(K)-1/sqrt(K))*sigma_Pi."""
    root = math.sqrt(K)
    return (root - 1.0 / root) * np.sqrt(Pi * (1.0 - Pi))


def implied_gain_to_loss(pi, Pi_upper):
    """Expected gain over expected loss of a unit position in the change leg.

    Buying the upper branch at probability-price Pi_upper gains (1 - Pi_upper)
    on a hit and loses Pi_upper on a miss; weighting by the holder's belief pi
    gives the odds ratio O(pi)/O(Pi_upper). In canonical pricing this is the
    constant K whatever the belief level.
    """
    pi = np.asarray(pi, float)
    Pi_upper = np.asarray(Pi_upper, float)
    if np.any((pi <= 0) | (pi >= 1)) or np.any((Pi_upper <= 0) | (Pi_upper >= 1)):
        raise InputError("beliefs must lie in (0,1)")
    out = (pi / (1 - pi)) * ((1 - Pi_upper) / Pi_upper)
    return float(out) if out.ndim == 0 else out


def canonical_price(y_minus: float, S_delta: float, Pi: float, bsure_premium_to_go: float = 0.0) -> float:
    """Log-price as lower sure value plus priced upside minus premium-to-go.

    Pi here is the pricing probability of the upper branch; callers with a
    value-lowering change pass 1 - Pi(change).
    """
    return y_minus + S_delta * Pi - bsure_premium_to_go


def premium_decomposition(
    pi: float,
    A_plus: float,
    S_delta: float,
    bsure_rps: tuple[float, float] = (0.0, 0.0),
    true_p: float | None = None,
) -> PremiumDecomposition:
    """Split the total risk premium into sure-branch and model-risk parts.

    The model part is the belief gap (pi - A_plus) scaled by the impact, and
    k normalizes it by the intrinsic dispersion sqrt(pi(1-pi)). With the true
    change probability supplied, the ex-post drift gap adds the bias leg
    (true_p - pi)*S_delta on top of the priced leg.
    """
    if not (0 < pi < 1 and 0 < A_plus < 1):
        raise InputError("beliefs must lie in (0,1)")
    rp_plus, rp_minus = bsure_rps
    bsure = pi * rp_plus + (1 - pi) * rp_minus
    model = (pi - A_plus) * S_delta
    k = (pi - A_plus) / math.sqrt(pi * (1 - pi))
    gap = None
    if true_p is not None:
        gap = model + (true_p - pi) * S_delta
    return PremiumDecomposition(
        total_rp=bsure + model,
        bsure_part=bsure,
        model_part=model,
        price_of_model_risk=k,
        expost_gap=gap,
    )


def _upper_branch_prob(Pi_change: float, sign_change: int) -> float:
    return Pi_change if sign_change == 1 else 1.0 - Pi_change


def _is_up_outcome(b: int, sign_change: int) -> bool:
    return (b == 1) == (sign_change == 1)


def initial_price_state(params: PricingParams) -> PriceState:
    pi0 = params.pi0
    Pi0 = float(rne_belief(pi0, params.K, params.sign_change))
    s = canonical_price(
        params.y_minus0,
        params.s_delta_at(0.0),
        _upper_branch_prob(Pi0, params.sign_change),
        params.premium_to_go(0.0),
    )
    return PriceState(t=0.0, loglr=0.0, pi=pi0, Pi=Pi0, y_minus=params.y_minus0, S=s)


def price_sde_step(
    state: PriceState,
    params: PricingParams,
    inf: InferenceParams,
    b: int,
    dt: float,
    noises: tuple[float, float],
) -> tuple[PriceState, dict]:
    """Advance beliefs and price by one step of length dt.

    noises = (z_Z, z_D) are standard normals; z_Z drives both the sure-value
    anchor and the price-relevant part of the log-LR, z_D the purely
    outcome-informative part. The belief-driven price move is the exact
    impact-times-belief increment, never its linearization, so the returned
    price equals the canonical formula identically. The step also returns an
    exact decomposition {ori, bsure, model} of the price move.
    """
    if dt <= 0:
        raise InputError("dt must be positive")
    z_z, z_d = noises
    t2 = state.t + dt
    var_z, var_d = inf.variance_between(state.t, t2)
    drift = (1.0 if b == 1 else -1.0) * (var_z + var_d) / 2.0
    loglr2 = state.loglr + drift + math.sqrt(var_d) * z_d + math.sqrt(var_z) * z_z

    prior_odds = params.pi0 / (1 - params.pi0)
    pi2 = float(posterior_from_loglr(prior_odds, loglr2))
    Pi2 = float(rne_belief(pi2, params.K, params.sign_change))

    up = _is_up_outcome(b, params.sign_change)
    y2 = state.y_minus + params.sigma_Z * math.sqrt(dt) * z_z + (params.rZ_delta * dt if up else 0.0)
    pu1 = _upper_branch_prob(state.Pi, params.sign_change)
    pu2 = _upper_branch_prob(Pi2, params.sign_change)
    sd1 = params.s_delta_at(state.t)
    sd2 = params.s_delta_at(t2)
    s2 = canonical_price(y2, sd2, pu2, params.premium_to_go(t2))

    parts = {
        "ori": params.bsure_premium_drift * dt + params.sigma_Z * math.sqrt(dt) * z_z,
        "bsure": ((1.0 if up else 0.0) - pu1) * params.rZ_delta * dt,
        "model": sd2 * pu2 - sd1 * pu1 + pu1 * params.rZ_delta * dt,
    }
    return PriceState(t=t2, loglr=loglr2, pi=pi2, Pi=Pi2, y_minus=y2, S=s2), parts


@dataclass
class PricePath:
    t: np.ndarray
    loglr: np.ndarray
    pi: np.ndarray
    Pi: np.ndarray
    S: np.ndarray
    k_pi: np.ndarray
    b: int
    sign_change: int


def simulate_price_path(
    inf: InferenceParams,
    params: PricingParams,
    b: int,
    seed,
    record_times=None,
) -> PricePath:
    """Simulate one priced path on a dense dt-grid (or given record times).

    Schedule breakpoints should align with the grid so the anchor and the
    log-LR stay driven by the same Z-noise within each step; jump mode
    inserts the breakpoints automatically.
    """
    params.check_consistent(inf)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if record_times is None:
        n_steps = int(round(min(inf.t_max, params.t_max) / inf.dt))
        times = np.linspace(0.0, n_steps * inf.dt, n_steps + 1)
    else:
        inner = [p for p in inf.breakpoints() if 0 < p < record_times[-1]]
        times = np.unique(np.concatenate([[0.0], np.asarray(record_times, float), inner]))
    n = len(times) - 1
    z_d = rng.standard_normal(n)
    need_z = params.sigma_Z > 0 or any(
        inf.sigma_at(times[i])[0] > 0 for i in range(n)
    ) or inf.sigma_lZ > 0
    z_z = rng.standard_normal(n) if need_z else np.zeros(n)

    state = initial_price_state(params)
    out = [state]
    for i in range(n):
        state, _ = price_sde_step(state, params, inf, b, times[i + 1] - times[i], (z_z[i], z_d[i]))
        out.append(state)
    t = np.array([s.t for s in out])
    Pi = np.array([s.Pi for s in out])
    path = PricePath(
        t=t,
        loglr=np.array([s.loglr for s in out]),
        pi=np.array([s.pi for s in out]),
        Pi=Pi,
        S=np.array([s.S for s in out]),
        k_pi=price_of_model_risk(Pi, params.K),
        b=b,
        sign_change=params.sign_change,
    )
    if record_times is not None:
        keep = np.isin(t, np.asarray(record_times, float))
        path = PricePath(
            t[keep], path.loglr[keep], path.pi[keep], Pi[keep], path.S[keep],
            path.k_pi[keep], b, params.sign_change,
        )
    return path


def diffusion_price_of_risk(Pi: float, pi: float, sigma_l: float, K: float, S_delta: float) -> dict:
    """Instantaneous drift/volatility structure of the priced belief term.

    Returns the diffusion coefficient, the ensemble drift relative to the
    inference belief, their ratio (the diffusion price of model risk), and
    the leading-order linear-in-volatility approximation of the drift ratio.
    """
    if not (0 < Pi < 1 and 0 < pi < 1):
        raise InputError("beliefs must lie in (0,1)")
    sigma_Pi = math.sqrt(Pi * (1 - Pi))
    sigma_pi = math.sqrt(pi * (1 - pi))
    root = math.sqrt(K)
    k_pi = (root - 1 / root) * sigma_Pi
    sigma = sigma_Pi**2 * sigma_l * S_delta
    mu = (sigma_Pi * sigma_l) ** 2 * k_pi * sigma_pi * S_delta
    return {
        "sigma": sigma,
        "mu": mu,
        "mu_over_sigma": (root - 1 / root) * sigma_Pi * sigma_pi * sigma_l,
        "capm_approx": (K - 1) / S_delta * sigma,
    }


def verify_canonical_ode(K: float, grid, candidate, h: float = 1e-4, sign_change: int = 1) -> float:
    """Max residual of the pricing-map ODE A''/(2A') = (pi - A)/(pi(1-pi)).

    The canonical belief map solves this identically; any Mobius-distinct
    candidate leaves an O(1) residual somewhere on the grid. Central
    differences with step h; the grid must stay h away from {0, 1}.
    """
    g = np.asarray(grid, float)
    if np.any(g - h <= 0) or np.any(g + h >= 1):
        raise InputError("grid must keep h-distance from {0,1}")
    a0 = np.asarray(candidate(g), float)
    ap = np.asarray(candidate(g + h), float)
    am = np.asarray(candidate(g - h), float)
    d1 = (ap - am) / (2 * h)
    d2 = (ap - 2 * a0 + am) / (h * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        lhs = d2 / (2 * d1)
    rhs = (g - a0) / (g * (1 - g))
    resid = np.abs(lhs - rhs)
    resid = np.where(np.isfinite(resid), resid, np.inf)
    return float(np.max(resid))


def write_price_paths_csv(path, runs: list[PricePath]) -> None:
    """Dump priced runs as rows (path_id, t, pi, Pi, S, k_pi, B, sign)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "t", "pi", "Pi", "S", "k_pi", "B", "sign"])
        for i, run in enumerate(runs):
            for j in range(len(run.t)):
                w.writerow(
                    [
                        i,
                        f"{run.t[j]:.17g}",
                        f"{run.pi[j]:.17g}",
                        f"{run.Pi[j]:.17g}",
                        f"{run.S[j]:.17g}",
                        f"{run.k_pi[j]:.17g}",
                        run.b,
                        run.sign_change,
                    ]
                )
