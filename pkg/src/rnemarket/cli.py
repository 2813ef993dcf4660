"""Config-driven experiment runner.

One flat key-value config file drives five subcommands (simulate, curves,
cohorts, estimate, validate). Everything that affects output lives in the
config or the documented flags; no environment variables are consulted, and
for a fixed (config, seed) the emitted CSVs are byte-identical whatever the
thread budget.

Exit codes: 0 success, 2 config error, 3 validation/estimation failure,
4 resource guard.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .anomalies import AnomalyParams, analytic_curve, default_grid, lowrisk_peak, peak_report
from .estimation import (
    ShapeError,
    format_report,
    recover_params,
    roundtrip,
    write_roundtrip_csv,
)
from .inference import InferenceParams, InputError, Milestones
from .market import (
    MarketConfig,
    PricingParams,
    ResourceLimitError,
    TruthParams,
    expost_decomposition,
    measure_expost_excess,
    simulate_market,
    sort_cohorts,
    write_cohorts_csv,
    write_panel_csv,
)
from .pricing import (
    implied_gain_to_loss,
    premium_decomposition,
    rne_belief,
    simulate_price_path,
    verify_canonical_ode,
    write_price_paths_csv,
)
from . import anomalies


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved experiment configuration.

    market carries the simulation primitives; the remaining fields steer the
    analytic-curve lattice, the estimator, and execution. Derived quantities
    (priors, milestone times) are always recomputed from primitives; the
    config may state them, in which case they are cross-checked to 1e-12.
    """

    market: MarketConfig
    estimation_t: float | None = None
    n_boot: int = 200
    curves_rho: tuple = (9.0,)
    curves_K: tuple = (1.5,)
    curves_t: float = 2.4
    grid_points: int = 1000
    eps_p: float = 0.2
    M_rho: float = 5.0
    seed: int = 0
    threads: int = 1

    def derived(self) -> dict:
        truth = self.market.truth
        pr = self.market.pricing
        sigma_l = self.market.inference.sigma_l_total(0.0)
        mil = Milestones.from_params(truth.p1_0, max(truth.rho, 1.0), pr.K, sigma_l)
        return {
            "pi1_0": truth.pi1_0,
            "Pi1_0_plus": self.market.Pi1_0(1),
            "Pi1_0_minus": self.market.Pi1_0(-1),
            "t_p": mil.t_p,
            "t_K": mil.t_K,
            "t_rho": mil.t_rho,
        }


def _parse_float_list(text: str) -> tuple:
    if not text.strip():
        return ()
    return tuple(float(tok) for tok in text.split(","))


def _parse_schedule(text: str) -> tuple:
    out = []
    for entry in text.split(","):
        entry = entry.strip()
        if not entry:
            continue
        parts = entry.split(":")
        if len(parts) != 3:
            raise ValueError("schedule entries are t:sigma_lZ:sigma_lD")
        out.append(tuple(float(p) for p in parts))
    return tuple(out)


def _parse_t_or_auto(text: str):
    if text.strip().lower() == "auto":
        return None
    return float(text)


# key -> (parse, default). Order here is the canonical echo order.
_SCHEMA = {
    "market.n_assets": (int, 10_000),
    "market.p1_0": (float, 0.49),
    "market.rho": (float, 9.0),
    "market.sign_prob_plus": (float, 0.5),
    "market.b_measure": (str, "truth"),
    "market.record_times": (_parse_float_list, (0.6, 1.2, 2.4, 8.0)),
    "market.n_bins": (int, 50),
    "market.n_min": (int, 50),
    "market.max_asset_steps": (float, 2e8),
    "pricing.K": (float, 1.5),
    "pricing.S_delta": (float, 1.0),
    "pricing.bsure_premium_drift": (float, 0.0),
    "pricing.rZ_delta": (float, 0.0),
    "pricing.sigma_Z": (float, 0.0),
    "pricing.y_minus0": (float, 0.0),
    "pricing.t_max": (float, 10.0),
    "inference.sigma_lZ": (float, 0.0),
    "inference.sigma_lD": (float, 0.5),
    "inference.dt": (float, 0.01),
    "inference.t_max": (float, 10.0),
    "inference.schedule": (_parse_schedule, ()),
    "estimation.t": (_parse_t_or_auto, None),
    "estimation.n_boot": (int, 200),
    "curves.rho_list": (_parse_float_list, (9.0,)),
    "curves.K_list": (_parse_float_list, (1.5,)),
    "curves.t": (float, 2.4),
    "curves.grid_points": (int, 1000),
    "window.eps_p": (float, 0.2),
    "window.M_rho": (float, 5.0),
    "seed": (int, 0),
    "threads": (int, 1),
}

_DERIVED_KEYS = ("pi1_0", "Pi1_0_plus", "Pi1_0_minus", "t_p", "t_K", "t_rho")


def parse_config(text: str) -> RunConfig:
    """Parse a key-value config document into a validated RunConfig.

    Lines are ``key = value``; ``#`` starts a comment; unknown or duplicate
    keys and malformed values are rejected with their line number. Stated
    ``derived.*`` values are checked against recomputation to 1e-12.
    """
    values = {}
    derived_stated = {}
    where = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key in where:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} (first set on line {where[key]})"
            )
        where[key] = lineno
        if key.startswith("derived."):
            name = key[len("derived."):]
            if name not in _DERIVED_KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                derived_stated[name] = float(val)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: invalid value for {key!r}: {e}") from e
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parse, _ = _SCHEMA[key]
        try:
            values[key] = parse(val)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: invalid value for {key!r}: {e}") from e

    get = lambda k: values.get(k, _SCHEMA[k][1])
    try:
        inference = InferenceParams(
            sigma_lZ=get("inference.sigma_lZ"),
            sigma_lD=get("inference.sigma_lD"),
            dt=get("inference.dt"),
            t_max=get("inference.t_max"),
            schedule=get("inference.schedule"),
        )
        truth = TruthParams(p1_0=get("market.p1_0"), rho=get("market.rho"))
        pricing = PricingParams(
            K=get("pricing.K"),
            S_delta=get("pricing.S_delta"),
            bsure_premium_drift=get("pricing.bsure_premium_drift"),
            rZ_delta=get("pricing.rZ_delta"),
            sigma_Z=get("pricing.sigma_Z"),
            y_minus0=get("pricing.y_minus0"),
            t_max=get("pricing.t_max"),
            pi0=truth.pi1_0,
        )
        market = MarketConfig(
            n_assets=get("market.n_assets"),
            truth=truth,
            pricing=pricing,
            inference=inference,
            sign_prob_plus=get("market.sign_prob_plus"),
            record_times=get("market.record_times"),
            b_measure=get("market.b_measure"),
            n_min=get("market.n_min"),
            n_bins=get("market.n_bins"),
            max_asset_steps=get("market.max_asset_steps"),
        )
        rc = RunConfig(
            market=market,
            estimation_t=get("estimation.t"),
            n_boot=get("estimation.n_boot"),
            curves_rho=get("curves.rho_list"),
            curves_K=get("curves.K_list"),
            curves_t=get("curves.t"),
            grid_points=get("curves.grid_points"),
            eps_p=get("window.eps_p"),
            M_rho=get("window.M_rho"),
            seed=get("seed"),
            threads=get("threads"),
        )
    except InputError as e:
        raise ConfigError(str(e)) from e
    if rc.n_boot < 0:
        raise ConfigError("estimation.n_boot must be nonnegative")
    if rc.grid_points < 10:
        raise ConfigError("curves.grid_points must be at least 10")
    if rc.threads < 1:
        raise ConfigError("threads must be at least 1")
    if rc.seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if not rc.curves_rho or not rc.curves_K:
        raise ConfigError("curves.rho_list and curves.K_list must be nonempty")

    derived = rc.derived()
    for name, stated in derived_stated.items():
        actual = derived[name]
        if abs(stated - actual) > 1e-12 * max(1.0, abs(actual)):
            raise ConfigError(
                f"derived.{name} = {stated!r} is inconsistent with the primitives "
                f"(recomputed {actual!r})"
            )
    return rc


def _fmt(value) -> str:
    if isinstance(value, bool):
        raise TypeError("no boolean config values")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def echo_config(rc: RunConfig) -> str:
    """Canonical text form: every key, schema order, exact float round-trip.

    parse_config(echo_config(rc)) reproduces rc, and echoing again is
    byte-identical (the schema round-trip fixed point).
    """
    m = rc.market
    current = {
        "market.n_assets": m.n_assets,
        "market.p1_0": m.truth.p1_0,
        "market.rho": m.truth.rho,
        "market.sign_prob_plus": m.sign_prob_plus,
        "market.b_measure": m.b_measure,
        "market.record_times": ", ".join(repr(float(t)) for t in m.record_times),
        "market.n_bins": m.n_bins,
        "market.n_min": m.n_min,
        "market.max_asset_steps": m.max_asset_steps,
        "pricing.K": m.pricing.K,
        "pricing.S_delta": m.pricing.S_delta,
        "pricing.bsure_premium_drift": m.pricing.bsure_premium_drift,
        "pricing.rZ_delta": m.pricing.rZ_delta,
        "pricing.sigma_Z": m.pricing.sigma_Z,
        "pricing.y_minus0": m.pricing.y_minus0,
        "pricing.t_max": m.pricing.t_max,
        "inference.sigma_lZ": m.inference.sigma_lZ,
        "inference.sigma_lD": m.inference.sigma_lD,
        "inference.dt": m.inference.dt,
        "inference.t_max": m.inference.t_max,
        "inference.schedule": ", ".join(
            f"{repr(float(t))}:{repr(float(a))}:{repr(float(b))}"
            for t, a, b in m.inference.schedule
        ),
        "estimation.t": "auto" if rc.estimation_t is None else repr(rc.estimation_t),
        "estimation.n_boot": rc.n_boot,
        "curves.rho_list": ", ".join(repr(float(x)) for x in rc.curves_rho),
        "curves.K_list": ", ".join(repr(float(x)) for x in rc.curves_K),
        "curves.t": rc.curves_t,
        "curves.grid_points": rc.grid_points,
        "window.eps_p": rc.eps_p,
        "window.M_rho": rc.M_rho,
        "seed": rc.seed,
        "threads": rc.threads,
    }
    lines = ["# canonical run configuration"]
    for key in _SCHEMA:
        lines.append(f"{key} = {_fmt(current[key])}")
    lines.append("# derived from the primitives above (informational, re-checked on parse)")
    for name, value in rc.derived().items():
        lines.append(f"derived.{name} = {repr(float(value))}")
    return "\n".join(lines) + "\n"


def _curve_params(rc: RunConfig, rho: float, K: float) -> AnomalyParams:
    return AnomalyParams.from_primitives(
        rc.market.truth.p1_0,
        rho,
        K,
        rc.market.inference.sigma_l_total(rc.curves_t),
        rc.curves_t,
        S_delta=rc.market.pricing.S_delta,
        eps_p=rc.eps_p,
        M_rho=rc.M_rho,
    )


def _cmd_simulate(rc: RunConfig, out: Path) -> int:
    panel = simulate_market(rc.market, rc.seed, threads=rc.threads)
    write_panel_csv(out / "panel.csv", panel)
    detail = []
    for a in range(min(10, panel.n_assets)):
        params = replace(rc.market.pricing, sign_change=int(panel.sign[a]))
        detail.append(
            simulate_price_path(
                rc.market.inference,
                params,
                int(panel.B[a]),
                np.random.default_rng([rc.seed, a, 0xDE7A11]),
            )
        )
    write_price_paths_csv(out / "price_paths.csv", detail)
    print(f"wrote {out / 'panel.csv'} ({panel.n_assets} assets x {len(panel.times)} epochs)")
    print(f"wrote {out / 'price_paths.csv'} ({len(detail)} illustrative dense paths)")
    return 0


def _cmd_curves(rc: RunConfig, out: Path) -> int:
    step = 1.0 / rc.grid_points
    peak_rows = []
    for rho in rc.curves_rho:
        for K in rc.curves_K:
            params = _curve_params(rc, rho, K)
            fname = out / f"curve_rho{rho:g}_K{K:g}.csv"
            with open(fname, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["kind", "v", "rp", "weight"])
                for kind in ("momentum_plus", "momentum_minus", "volatility"):
                    curve = analytic_curve(kind, params, grid=default_grid(kind, step))
                    for i in range(len(curve.v)):
                        w.writerow(
                            [
                                kind,
                                f"{curve.v[i]:.17g}",
                                f"{curve.rp[i]:.17g}",
                                f"{curve.n[i]:.17g}",
                            ]
                        )
            print(f"wrote {fname}")
            for kind in ("momentum_plus", "momentum_minus", "volatility"):
                rep = peak_report(kind, params, step=step, refine=step / 10)
                peak_rows.append(
                    [
                        f"{rho:.17g}",
                        f"{K:.17g}",
                        kind,
                        f"{rep['v_max']:.17g}",
                        f"{rep['rp_max']:.17g}",
                        f"{rep['v_formula']:.17g}",
                        f"{rep['formula_value']:.17g}",
                        f"{rep['abs_gap']:.17g}",
                        f"{rep['v_abs_gap']:.17g}",
                    ]
                )
    with open(out / "peaks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["rho", "K", "kind", "v_max", "rp_max", "v_formula", "formula_value",
             "abs_gap", "v_abs_gap"]
        )
        w.writerows(peak_rows)
    print(f"wrote {out / 'peaks.csv'}")
    return 0


def _cmd_cohorts(rc: RunConfig, out: Path) -> int:
    panel = simulate_market(rc.market, rc.seed, threads=rc.threads)
    path = out / "cohorts.csv"
    first = True
    for t in rc.market.record_times:
        measured = {}
        for conditioning in ("pi_level", "volatility"):
            srt = sort_cohorts(panel, t, conditioning=conditioning)
            measured.update(measure_expost_excess(panel, srt))
        write_cohorts_csv(path, measured, t, append=not first)
        first = False
    print(f"wrote {path} ({len(rc.market.record_times)} epochs)")
    return 0


def _cmd_estimate(rc: RunConfig, out: Path) -> int:
    try:
        res = roundtrip(
            rc.market, rc.seed, t=rc.estimation_t, n_boot=rc.n_boot, threads=rc.threads
        )
    except ShapeError as e:
        report = out / "estimate_FAILED.txt"
        with open(report, "w") as fh:
            fh.write(f"estimation failed: {e.reason}\n")
            curve = e.diagnostics.get("curve")
            for key, val in sorted(e.diagnostics.items()):
                if key != "curve":
                    fh.write(f"  {key} = {val}\n")
            if curve is not None:
                fh.write("curve (v, rp, se, n):\n")
                for i in range(len(curve.v)):
                    fh.write(
                        f"  {curve.v[i]:.6g} {curve.rp[i]:.6g} "
                        f"{curve.se[i]:.6g} {int(curve.n[i])}\n"
                    )
        print(f"estimation failed ({e.reason}); diagnostics in {report}", file=sys.stderr)
        return 3
    write_roundtrip_csv(out / "estimate.csv", [res])
    report = format_report(res)
    (out / "estimate_report.txt").write_text(report + "\n")
    print(report)
    print(f"wrote {out / 'estimate.csv'}")
    return 0


def _conservation_check(rc: RunConfig) -> float:
    cfg = replace(rc.market, n_assets=1000)
    panel = simulate_market(cfg, rc.seed, threads=rc.threads)
    odds_pi = panel.pi / (1 - panel.pi)
    odds_Pi = panel.Pi / (1 - panel.Pi)
    K_pow = cfg.pricing.K ** panel.sign[:, None].astype(float)
    return float(np.max(np.abs(odds_pi / odds_Pi / K_pow - 1)))


def _validate_checks(rc: RunConfig):
    """The property suite behind the validate subcommand.

    Yields (name, passed, detail); every check is fast enough to run on
    every build.
    """
    dev = _conservation_check(rc)
    yield "conserved priced-odds ratio (<=1e-12)", dev <= 1e-12, f"max rel dev {dev:.3g}"

    worst = 0.0
    for K in (1.0, 1.2, 1.5, 1.9):
        A = rne_belief(0.5, K, 1)
        dec = premium_decomposition(0.5, A, 1.0)
        worst = max(
            worst,
            abs(dec.price_of_model_risk - (K - 1) / (K + 1)),
            abs(implied_gain_to_loss(0.5, A) - K),
        )
    yield "peak-risk calibration at half-vol (<=1e-12)", worst <= 1e-12, f"max gap {worst:.3g}"

    grid = np.linspace(0.05, 0.95, 19)
    r_map = verify_canonical_ode(1.5, grid, lambda p: rne_belief(p, 1.5, 1))
    r_bad = verify_canonical_ode(1.5, grid, lambda p: p * p)
    ok = r_map < 1e-6 and r_bad > 0.05
    yield "canonical pricing ODE", ok, f"map {r_map:.3g}, quadratic {r_bad:.3g}"

    params = _curve_params(rc, 9.0, 1.5)
    gaps = []
    for kind in ("momentum_plus", "momentum_minus"):
        rep = peak_report(kind, params, step=1e-3, refine=1e-4)
        gaps += [rep["v_abs_gap"], rep["abs_gap"] / params.S_delta]
    ok = max(gaps) <= 1e-3
    yield "momentum peak formulas vs grid (<=1e-3)", ok, f"max gap {max(gaps):.3g}"

    rep = peak_report("volatility", params, step=1e-3, refine=1e-4)
    target = 0.1 * params.S_delta
    ok = abs(rep["v_max"] - 0.1) <= 0.02 and abs(rep["rp_max"] - target) <= 0.1 * target
    yield "low-risk peak near (0.1, 0.1 S_delta)", ok, (
        f"v {rep['v_max']:.4f}, rp {rep['rp_max']:.4f}"
    )

    params1 = _curve_params(rc, 1.0, 1.5)
    rep1 = peak_report("volatility", params1, step=1e-3, refine=1e-4)
    ok = abs(rep1["v_max"] - 0.5) <= 1e-9 and abs(rep1["rp_max"] - 0.1 * params1.S_delta) <= 1e-9
    yield "low-risk peak exact at rho=1", ok, f"v {rep1['v_max']:.6f}, rp {rep1['rp_max']:.6f}"

    worst = 0.0
    for rho in (1.0, 3.0, 9.0, 27.0):
        for K in (1.0, 1.2, 1.5, 1.9):
            v, rp = lowrisk_peak(rho, K, 1.0)
            rho_hat, K_hat = recover_params(v, rp, 1.0)
            worst = max(worst, abs(rho_hat - rho) / rho, abs(K_hat - K) / K)
    yield "peak inversion identity (<=1e-9)", worst <= 1e-9, f"max rel err {worst:.3g}"

    vgrid = np.linspace(0.05, 0.499, 10)
    mil = Milestones.from_params(params.p1_0, params.rho, params.K, params.sigma_l)
    mix = np.array([
        anomalies.momentum_mix(float(v), params.t, mil, params.rho, params.K, 1)
        for v in vgrid
    ])
    ok = bool(np.all(np.diff(mix) < 0) and mix[-1] < 1)
    yield "mix ratio monotone declining (K>1)", ok, (
        f"{mix[0]:.3g} at v={vgrid[0]:g} down to {mix[-1]:.3g} at v={vgrid[-1]:g}"
    )

    cfg_ref = replace(rc.market, n_assets=20_000, b_measure="reference")
    p_ref = simulate_market(cfg_ref, rc.seed, threads=rc.threads)
    pi0 = cfg_ref.truth.pi1_0
    z_ref = 0.0
    for j in range(len(p_ref.times)):
        x = p_ref.pi[:, j]
        z_ref = max(z_ref, abs(x.mean() - pi0) / (x.std(ddof=1) / math.sqrt(len(x))))
    yield "reference-measure belief martingale (3 SE)", z_ref <= 3.0, f"max |z| {z_ref:.2f}"

    cfg_rne = replace(rc.market, n_assets=20_000, b_measure="rne")
    p_rne = simulate_market(cfg_rne, rc.seed, threads=rc.threads)
    z_rne = 0.0
    for sgn in (1, -1):
        sel = p_rne.sign == sgn
        target = cfg_rne.Pi1_0(sgn)
        for j in range(len(p_rne.times)):
            x = p_rne.Pi[sel, j]
            z_rne = max(z_rne, abs(x.mean() - target) / (x.std(ddof=1) / math.sqrt(sel.sum())))
    yield "priced-measure belief martingale (3 SE)", z_rne <= 3.0, f"max |z| {z_rne:.2f}"

    cfg_small = replace(rc.market, n_assets=20_000)
    p_small = simulate_market(cfg_small, rc.seed, threads=rc.threads)
    t_mid = rc.market.record_times[min(2, len(rc.market.record_times) - 1)]
    dec = expost_decomposition(p_small, t_mid)
    z_dec = max(
        abs(dec[s]["residual"]) / dec[s]["residual_se"] for s in ("all", "plus", "minus")
    )
    yield "ex-post decomposition reconciles (3 SE)", z_dec <= 3.0, f"max |z| {z_dec:.2f}"

    cfg_tiny = replace(rc.market, n_assets=2000)
    pa = simulate_market(cfg_tiny, rc.seed, threads=1)
    pb = simulate_market(cfg_tiny, rc.seed, threads=2)
    same = all(
        np.array_equal(getattr(pa, f), getattr(pb, f))
        for f in ("B", "sign", "loglr", "pi", "Pi", "S")
    )
    yield "thread-count determinism", same, "panels identical across 1 and 2 workers"

    echoed = echo_config(rc)
    ok = echo_config(parse_config(echoed)) == echoed
    yield "config echo fixed point", ok, "parse -> echo -> parse is stable"

    lr = anomalies.event_lr_from_ratio(0.25, 3.0, 1)
    ok = abs(lr - 1.0 / 9.0) <= 1e-12
    yield "event likelihood-ratio spot value", ok, f"value {lr:.12f}"


def _cmd_validate(rc: RunConfig, out: Path) -> int:
    failures = 0
    lines = []
    for name, passed, detail in _validate_checks(rc):
        status = "PASS" if passed else "FAIL"
        if not passed:
            failures += 1
        line = f"{status}  {name}: {detail}"
        lines.append(line)
        print(line)
    (out / "validate_report.txt").write_text("\n".join(lines) + "\n")
    if failures:
        print(f"{failures} properties failed", file=sys.stderr)
        return 3
    print("all properties passed")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "curves": _cmd_curves,
    "cohorts": _cmd_cohorts,
    "estimate": _cmd_estimate,
    "validate": _cmd_validate,
}


def run_subcommand(cmd: str, rc: RunConfig, out_dir) -> int:
    """Dispatch one subcommand; returns the process exit code."""
    if cmd not in _COMMANDS:
        raise ConfigError(f"unknown subcommand {cmd!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo.txt").write_text(echo_config(rc))
    return _COMMANDS[cmd](rc, out)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="rnemarket",
        description=__doc__.splitlines()[0],
    )
    ap.add_argument("command", choices=sorted(_COMMANDS))
    ap.add_argument("--config", metavar="PATH", help="key-value config file")
    ap.add_argument("--seed", type=int, metavar="U64", help="override config seed")
    ap.add_argument("--out-dir", default="out", metavar="PATH")
    ap.add_argument("--threads", type=int, metavar="N", help="override thread budget")
    ap.add_argument("--grid-points", type=int, metavar="N",
                    help="override analytic grid resolution")
    args = ap.parse_args(argv)

    try:
        text = ""
        if args.config is not None:
            try:
                text = Path(args.config).read_text()
            except OSError as e:
                raise ConfigError(f"cannot read config {args.config!r}: {e}") from e
        rc = parse_config(text)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be a nonnegative integer")
            rc = replace(rc, seed=args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            rc = replace(rc, threads=args.threads)
        if args.grid_points is not None:
            if args.grid_points < 10:
                raise ConfigError("--grid-points must be at least 10")
            rc = replace(rc, grid_points=args.grid_points)
        return run_subcommand(args.command, rc, args.out_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except InputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2
    except ResourceLimitError as e:
        print(f"resource guard: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
