"""Cross-sectional market simulator and empirical cohort measurement.

Simulates N independent assets, each carrying one unresolved binary change
with a random direction, prices them canonically, and measures the cohort
curves (momentum by belief level, low-risk by belief volatility) that the
analytic module predicts. Reproducibility is exact: every asset draws from
its own counter-based substream keyed by (seed, asset_id), so the panel is
bit-identical for any worker count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .anomalies import CohortCurve
from .inference import InferenceParams, InputError, posterior_from_loglr
from .pricing import PricingParams, canonical_price, price_of_model_risk, rne_belief

__all__ = [
    "ResourceLimitError",
    "TruthParams",
    "MarketConfig",
    "MarketPanel",
    "CohortSort",
    "make_config",
    "simulate_market",
    "sort_cohorts",
    "measure_expost_excess",
    "expost_decomposition",
    "write_panel_csv",
    "write_cohorts_csv",
]

CHUNK = 8192


class ResourceLimitError(RuntimeError):
    """Requested simulation exceeds the configured step budget."""


@dataclass(frozen=True)
class TruthParams:
    """Objective law of the change outcomes and the bias linking it to priors."""

    p1_0: float = 0.49
    rho: float = 9.0

    def __post_init__(self) -> None:
        if not 0 < self.p1_0 < 1:
            raise InputError("p1_0 must lie in (0,1)")
        if self.rho <= 0:
            raise InputError("rho must be positive")

    @property
    def pi1_0(self) -> float:
        """Reference prior: true odds discounted by rho."""
        return float(expit(logit(self.p1_0) - math.log(self.rho)))


@dataclass(frozen=True)
class MarketConfig:
    n_assets: int = 10_000
    truth: TruthParams = field(default_factory=TruthParams)
    pricing: PricingParams = field(default_factory=PricingParams)
    inference: InferenceParams = field(default_factory=InferenceParams)
    sign_prob_plus: float = 0.5
    record_times: tuple = (0.6, 1.2, 2.4, 8.0)
    b_measure: str = "truth"
    n_min: int = 50
    n_bins: int = 50
    max_asset_steps: float = 2e8

    def __post_init__(self) -> None:
        if self.n_assets < 1:
            raise InputError("n_assets must be positive")
        if not 0 <= self.sign_prob_plus <= 1:
            raise InputError("sign_prob_plus must lie in [0,1]")
        if len(self.record_times) == 0:
            raise InputError("record_times must be nonempty")
        rt = tuple(float(t) for t in self.record_times)
        if any(t <= 0 for t in rt) or any(b <= a for a, b in zip(rt, rt[1:])):
            raise InputError("record_times must be positive and strictly increasing")
        if rt[-1] > min(self.inference.t_max, self.pricing.t_max):
            raise InputError("record_times exceed the horizon")
        if self.b_measure not in ("truth", "reference", "rne"):
            raise InputError("b_measure must be truth, reference or rne")
        if self.n_bins < 2:
            raise InputError("n_bins must be at least 2")
        if abs(logit(self.pricing.pi0) - logit(self.truth.pi1_0)) > 1e-12:
            raise InputError(
                "pricing.pi0 must equal the reference prior derived from the truth"
            )
        self.pricing.check_consistent(self.inference)

    @property
    def pi1_0(self) -> float:
        return self.truth.pi1_0

    def Pi1_0(self, sign_change: int) -> float:
        return float(rne_belief(self.truth.pi1_0, self.pricing.K, sign_change))


def make_config(**kw) -> MarketConfig:
    """Build a MarketConfig with the pricing prior derived from the truth.

    Accepts MarketConfig fields plus flattened pricing overrides; pricing.pi0
    is always recomputed as the reference prior, never taken from the caller.
    """
    truth = kw.pop("truth", None) or TruthParams(
        p1_0=kw.pop("p1_0", 0.49), rho=kw.pop("rho", 9.0)
    )
    pricing = kw.pop("pricing", None) or PricingParams()
    pricing = replace(pricing, pi0=truth.pi1_0, **{
        k: kw.pop(k) for k in ("K", "S_delta", "bsure_premium_drift", "rZ_delta", "sigma_Z")
        if k in kw
    })
    inference = kw.pop("inference", None) or InferenceParams()
    return MarketConfig(truth=truth, pricing=pricing, inference=inference, **kw)


@dataclass
class MarketPanel:
    """Simulated ensemble at the recorded epochs.

    Arrays are (n_assets, n_times) except B and sign which are per asset.
    Pi is the priced probability of the change itself (not of the upper
    branch); S folds the direction, matching the canonical price.
    """

    config: MarketConfig
    seed: int
    times: np.ndarray
    B: np.ndarray
    sign: np.ndarray
    loglr: np.ndarray
    pi: np.ndarray
    Pi: np.ndarray
    S: np.ndarray

    @property
    def n_assets(self) -> int:
        return len(self.B)

    def time_index(self, t: float) -> int:
        hits = np.nonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))[0]
        if len(hits) != 1:
            raise InputError(f"t={t} is not a recorded epoch")
        return int(hits[0])

    def true_posterior(self, idx: int) -> np.ndarray:
        """Objective change probability given each asset's data at epoch idx."""
        prior = logit(self.config.truth.p1_0)
        return expit(prior + self.loglr[:, idx])


def _grid_and_interval_laws(config: MarketConfig):
    inf = config.inference
    last = config.record_times[-1]
    inner = [p for p in inf.breakpoints() if 0 < p < last]
    times = np.unique(np.concatenate([[0.0], np.asarray(config.record_times, float), inner]))
    n_int = len(times) - 1
    var_z = np.empty(n_int)
    var_d = np.empty(n_int)
    for i in range(n_int):
        var_z[i], var_d[i] = inf.variance_between(times[i], times[i + 1])
    rec_idx = np.searchsorted(times, np.asarray(config.record_times, float))
    return times, var_z, var_d, rec_idx


def _b_prob(config: MarketConfig, sign: int) -> float:
    if config.b_measure == "truth":
        return config.truth.p1_0
    if config.b_measure == "reference":
        return config.truth.pi1_0
    return config.Pi1_0(sign)


def simulate_market(config: MarketConfig, seed: int, threads: int = 1) -> MarketPanel:
    """Simulate the panel with exact Gaussian jumps between recorded epochs.

    Per asset, the substream order is: sign uniform, outcome uniform, the
    D-stream normals for every interval, then the Z-stream normals only if
    some interval carries Z-variance. Chunked over assets with a fixed chunk
    size; identical output for any thread count.
    """
    times, var_z, var_d, rec_idx = _grid_and_interval_laws(config)
    n_int = len(times) - 1
    if config.n_assets * n_int > config.max_asset_steps:
        raise ResourceLimitError(
            f"{config.n_assets} assets x {n_int} intervals exceeds "
            f"max_asset_steps={config.max_asset_steps:g}"
        )
    pr = config.pricing
    need_z = pr.sigma_Z > 0 or np.any(var_z > 0)
    sd_z = np.sqrt(var_z)
    sd_d = np.sqrt(var_d)
    half = (var_z + var_d) / 2.0
    dts = np.diff(times)
    prior_odds = config.truth.pi1_0 / (1 - config.truth.pi1_0)
    n, T = config.n_assets, len(rec_idx)

    B = np.empty(n, dtype=np.int8)
    sign = np.empty(n, dtype=np.int8)
    loglr = np.empty((n, T))
    pi = np.empty((n, T))
    Pi = np.empty((n, T))
    S = np.empty((n, T))
    prem = np.array([pr.premium_to_go(t) for t in times])
    s_delta = np.array([pr.s_delta_at(t) for t in times])

    def fill(lo: int, hi: int) -> None:
        for a in range(lo, hi):
            rng = np.random.Generator(np.random.Philox(key=[seed, a]))
            u_sign = rng.random()
            u_b = rng.random()
            s = 1 if u_sign < config.sign_prob_plus else -1
            b = 1 if u_b < _b_prob(config, s) else 0
            z_d = rng.standard_normal(n_int)
            z_z = rng.standard_normal(n_int) if need_z else None
            incr = (1.0 if b == 1 else -1.0) * half + sd_d * z_d
            if z_z is not None:
                incr = incr + sd_z * z_z
            l_path = np.concatenate([[0.0], np.cumsum(incr)])
            y = np.full(len(times), pr.y_minus0)
            if pr.sigma_Z > 0 or pr.rZ_delta > 0:
                up = (b == 1) == (s == 1)
                dy = pr.sigma_Z * np.sqrt(dts) * z_z if pr.sigma_Z > 0 else np.zeros(n_int)
                if up and pr.rZ_delta > 0:
                    dy = dy + pr.rZ_delta * dts
                y[1:] += np.cumsum(dy)
            pi_path = posterior_from_loglr(prior_odds, l_path)
            Pi_path = rne_belief(pi_path, pr.K, s)
            up_prob = Pi_path if s == 1 else 1.0 - Pi_path
            s_path = canonical_price(y, s_delta, up_prob, prem)
            B[a] = b
            sign[a] = s
            loglr[a] = l_path[rec_idx]
            pi[a] = pi_path[rec_idx]
            Pi[a] = Pi_path[rec_idx]
            S[a] = s_path[rec_idx]

    bounds = [(lo, min(lo + CHUNK, n)) for lo in range(0, n, CHUNK)]
    if threads <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            fill(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: fill(*b), bounds))

    return MarketPanel(
        config=config, seed=seed, times=np.asarray(config.record_times, float),
        B=B, sign=sign, loglr=loglr, pi=pi, Pi=Pi, S=S,
    )


@dataclass
class CohortSort:
    """Cohort membership at one epoch: bins, per-asset assignment, sign mixes."""

    conditioning: str
    t: float
    t_index: int
    edges: np.ndarray
    bin_index: np.ndarray
    side_high: np.ndarray | None
    curves: dict


def _mix_and_se(sign: np.ndarray, members: np.ndarray) -> tuple[float, float]:
    n_plus = int(np.sum(sign[members] == 1))
    n_minus = int(np.sum(sign[members] == -1))
    if n_plus == 0 or n_minus == 0:
        return math.nan, math.nan
    mix = n_plus / n_minus
    return mix, mix * math.sqrt(1 / n_plus + 1 / n_minus)


def sort_cohorts(
    panel: MarketPanel,
    t: float,
    binning="equal",
    conditioning: str = "volatility",
) -> CohortSort:
    """Group assets by belief level (pi_level) or folded level (volatility).

    binning is either the string "equal" (n_bins equal-width bins over the
    domain), an explicit increasing edge array, or ("quantiles", q) for
    equal-occupancy bins. Empty bins stay in the output with n=0.
    """
    idx = panel.time_index(t)
    vals = panel.Pi[:, idx]
    if conditioning == "volatility":
        folded = np.minimum(vals, 1.0 - vals)
        domain = (0.0, 0.5)
        x = folded
    elif conditioning == "pi_level":
        domain = (0.0, 1.0)
        x = vals
    else:
        raise InputError("conditioning must be pi_level or volatility")

    if isinstance(binning, str) and binning == "equal":
        n_bins = panel.config.n_bins if conditioning == "pi_level" else panel.config.n_bins // 2
        edges = np.linspace(domain[0], domain[1], n_bins + 1)
    elif isinstance(binning, tuple) and binning and binning[0] == "quantiles":
        q = int(binning[1])
        edges = np.unique(np.quantile(x, np.linspace(0, 1, q + 1)))
        if len(edges) < 2:
            edges = np.asarray(domain, float)
        edges[0], edges[-1] = domain
    else:
        edges = np.asarray(binning, float)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise InputError("binning edges must be an increasing 1-d array")
    bin_index = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(edges) - 2)
    centers = 0.5 * (edges[:-1] + edges[1:])

    n_b = len(centers)
    counts = np.bincount(bin_index, minlength=n_b).astype(float)
    mix = np.full(n_b, np.nan)
    for b in range(n_b):
        members = bin_index == b
        if counts[b] > 0:
            mix[b], _ = _mix_and_se(panel.sign, members)

    nanrp = np.full(n_b, np.nan)
    if conditioning == "volatility":
        curves = {
            "volatility": CohortCurve(
                "volatility", centers, nanrp, counts, mix=mix,
                meta={"t": t, "edges": edges},
            )
        }
        side_high = vals > 0.5
    else:
        curves = {}
        for kind, s in (("momentum_plus", 1), ("momentum_minus", -1)):
            csel = np.bincount(bin_index[panel.sign == s], minlength=n_b).astype(float)
            curves[kind] = CohortCurve(
                kind, centers, nanrp.copy(), csel, mix=mix.copy(),
                meta={"t": t, "edges": edges},
            )
        side_high = None
    return CohortSort(conditioning, t, idx, edges, bin_index, side_high, curves)


def _cell_stats(x: np.ndarray) -> tuple[float, float, int]:
    n = len(x)
    if n == 0:
        return math.nan, math.nan, 0
    m = float(np.mean(x))
    var = float(np.var(x, ddof=1)) / n if n > 1 else math.nan
    return m, var, n


def measure_expost_excess(panel: MarketPanel, cohorts: CohortSort) -> dict:
    """Fill cohort curves with empirical mean excess against resolved outcomes.

    Momentum curves score each member against the bin center with its own
    sign: sign*(1_{B=1} - v_bin)*S_delta. Volatility curves average the two
    sign arms half/half on each side of the fold (the unconditional mix) and
    weight the fold sides by occupancy, matching the analytic composition.
    Points below n_min members are kept but flagged low-confidence.
    """
    cfg = panel.config
    S_delta = cfg.pricing.S_delta
    idx = cohorts.t_index
    b_hit = (panel.B == 1).astype(float)
    out = {}
    if cohorts.conditioning == "pi_level":
        for kind, s in (("momentum_plus", 1), ("momentum_minus", -1)):
            base = cohorts.curves[kind]
            n_b = len(base.v)
            rp = np.full(n_b, np.nan)
            se = np.full(n_b, np.nan)
            n = np.zeros(n_b)
            sel = panel.sign == s
            for b in range(n_b):
                members = sel & (cohorts.bin_index == b)
                x = s * (b_hit[members] - base.v[b]) * S_delta
                m, var, cnt = _cell_stats(x)
                rp[b] = m
                se[b] = math.sqrt(var) if cnt > 1 else math.nan
                n[b] = cnt
            out[kind] = CohortCurve(
                kind, base.v, rp, n, se=se, mix=base.mix,
                low_confidence=n < cfg.n_min, meta=dict(base.meta),
            )
        return out

    base = cohorts.curves["volatility"]
    n_b = len(base.v)
    rp = np.full(n_b, np.nan)
    se = np.full(n_b, np.nan)
    n = np.zeros(n_b)
    for b in range(n_b):
        members = cohorts.bin_index == b
        n[b] = np.sum(members)
        if n[b] == 0:
            continue
        side_means = []
        side_vars = []
        side_n = []
        ok = True
        for high in (False, True):
            side = members & (cohorts.side_high == high)
            n_side = int(np.sum(side))
            if n_side == 0:
                continue
            u = 1.0 - base.v[b] if high else base.v[b]
            arm_m = []
            arm_v = []
            for s in (1, -1):
                cell = side & (panel.sign == s)
                x = s * (b_hit[cell] - u) * S_delta
                m, var, cnt = _cell_stats(x)
                if cnt == 0 or not np.isfinite(var):
                    ok = False
                arm_m.append(m)
                arm_v.append(var)
            side_means.append(0.5 * (arm_m[0] + arm_m[1]))
            side_vars.append(0.25 * (arm_v[0] + arm_v[1]))
            side_n.append(n_side)
        if not side_n:
            continue
        w = np.asarray(side_n, float) / float(sum(side_n))
        if ok:
            rp[b] = float(np.dot(w, side_means))
            se[b] = float(math.sqrt(np.dot(w**2, side_vars)))
    out["volatility"] = CohortCurve(
        "volatility", base.v, rp, n, se=se, mix=base.mix,
        low_confidence=(n < cfg.n_min) | ~np.isfinite(rp), meta=dict(base.meta),
    )
    return out


def expost_decomposition(panel: MarketPanel, t: float) -> dict:
    """Split the panel's mean excess into priced, bias and residual parts.

    Per asset the legs fold by the change direction: total = sign*(1_B - Pi),
    priced = sign*(pi - Pi), bias = sign*(p_t - pi) with p_t the objective
    posterior, residual = sign*(1_B - p_t). They telescope to the total
    identically; the residual is the pure luck term, zero in expectation
    under the truth measure. Reported for the whole panel and per sign
    group: with a symmetric sign mix the bias legs of the two groups offset
    each other, so the group scopes are where the bias is visible.
    """
    idx = panel.time_index(t)
    S_delta = panel.config.pricing.S_delta
    s = panel.sign.astype(float)
    b_hit = (panel.B == 1).astype(float)
    p_t = panel.true_posterior(idx)
    legs = {
        "total_drift": s * (b_hit - panel.Pi[:, idx]) * S_delta,
        "priced_part": s * (panel.pi[:, idx] - panel.Pi[:, idx]) * S_delta,
        "bias_part": s * (p_t - panel.pi[:, idx]) * S_delta,
        "residual": s * (b_hit - p_t) * S_delta,
    }
    scopes = {
        "all": np.ones(len(s), bool),
        "plus": panel.sign == 1,
        "minus": panel.sign == -1,
    }
    out = {}
    for scope, mask in scopes.items():
        rec = {"n": int(np.sum(mask))}
        for name, x in legs.items():
            xs = x[mask]
            rec[name] = float(np.mean(xs)) if len(xs) else math.nan
            rec[name + "_se"] = (
                float(np.std(xs, ddof=1) / math.sqrt(len(xs))) if len(xs) > 1 else math.nan
            )
        out[scope] = rec
    return out


def write_panel_csv(path, panel: MarketPanel) -> None:
    """Long-format panel rows (asset_id, t, pi, Pi, S, B, sign)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id", "t", "pi", "Pi", "S", "B", "sign"])
        for a in range(panel.n_assets):
            for j, t in enumerate(panel.times):
                w.writerow(
                    [
                        a,
                        f"{t:.17g}",
                        f"{panel.pi[a, j]:.17g}",
                        f"{panel.Pi[a, j]:.17g}",
                        f"{panel.S[a, j]:.17g}",
                        int(panel.B[a]),
                        int(panel.sign[a]),
                    ]
                )


def write_cohorts_csv(path, measured: dict, t: float, append: bool = False) -> None:
    """Cohort rows (t, kind, v_bin, rp, se, n, mix_ratio).

    With append=True rows are added without a header, so several epochs can
    share one file.
    """
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(["t", "kind", "v_bin", "rp", "se", "n", "mix_ratio"])
        for kind in sorted(measured):
            c = measured[kind]
            for i in range(len(c.v)):
                mix = c.mix[i] if c.mix is not None else math.nan
                w.writerow(
                    [
                        f"{t:.17g}",
                        kind,
                        f"{c.v[i]:.17g}",
                        f"{c.rp[i]:.17g}",
                        f"{c.se[i]:.17g}" if c.se is not None else "nan",
                        int(c.n[i]),
                        f"{mix:.17g}",
                    ]
                )
