"""Peak location, parameter recovery, and the simulated round trip."""

import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rnemarket.anomalies import AnomalyParams, CohortCurve, analytic_curve, lowrisk_peak
from rnemarket.estimation import (
    EstimationResult,
    ShapeError,
    _estimate_from_curve,
    find_peak,
    format_report,
    recover_params,
    roundtrip,
    write_roundtrip_csv,
)
from rnemarket.inference import InputError
from rnemarket.market import make_config

from conftest import ACCEPT_SEED


def _curve(v, rp, se=None, n=1000.0):
    v = np.asarray(v, float)
    n_arr = np.full(len(v), float(n))
    se_arr = None if se is None else np.full(len(v), float(se))
    return CohortCurve("volatility", v, np.asarray(rp, float), n_arr, se=se_arr)


def test_find_peak_recovers_an_exact_parabola():
    v = np.linspace(0.05, 0.45, 21)
    rp = 0.12 - 3.0 * (v - 0.17) ** 2
    v_hat, rp_hat, stats = find_peak(_curve(v, rp, se=1e-6))
    assert v_hat == pytest.approx(0.17, abs=1e-10)
    assert rp_hat == pytest.approx(0.12, abs=1e-10)
    assert stats["vertex_in_window"]


def test_find_peak_shape_errors():
    v = np.linspace(0.05, 0.45, 21)
    with pytest.raises(ShapeError, match="monotone"):
        find_peak(_curve(v, 0.3 * v, se=1e-6))
    with pytest.raises(ShapeError, match="flat"):
        find_peak(_curve(v, np.full(len(v), 0.05), se=0.02))
    two_bumps = 0.05 - 2.0 * np.minimum((v - 0.13) ** 2, (v - 0.37) ** 2)
    with pytest.raises(ShapeError, match="multiple peaks"):
        find_peak(_curve(v, two_bumps, se=1e-6))
    with pytest.raises(ShapeError, match="fewer than 5"):
        find_peak(_curve(v[:4], v[:4], se=1e-6))
    with pytest.raises(InputError):
        find_peak(_curve(v, v * (0.5 - v)), method="simplex")


def test_find_peak_error_diagnostics_carry_level_stats():
    v = np.linspace(0.05, 0.45, 21)
    try:
        find_peak(_curve(v, np.full(len(v), 0.05), se=0.02))
    except ShapeError as err:
        assert err.reason == "flat curve"
        assert err.diagnostics["weighted_mean_rp"] == pytest.approx(0.05)
        assert "lcb_v" in err.diagnostics
        assert err.diagnostics["n_usable"] == 21


def test_find_peak_ignores_thin_bins():
    v = np.linspace(0.05, 0.45, 21)
    rp = 0.12 - 3.0 * (v - 0.17) ** 2
    rp[4] = 5.0  # absurd value in a bin below the occupancy floor
    c = _curve(v, rp, se=1e-6)
    c.n[4] = 3
    v_hat, _, _ = find_peak(c, n_min=50)
    assert v_hat == pytest.approx(0.17, abs=1e-6)


def test_find_peak_handles_a_boundary_peak():
    # at rho=1 the analytic curve rises all the way to the fold point and
    # flattens there; that must read as a peak, not a monotone curve
    pars = AnomalyParams.from_primitives(0.49, 1.0, 1.5, 0.5, 2.4)
    curve = analytic_curve("volatility", pars)
    v_hat, rp_hat, _ = find_peak(curve, n_min=0)
    assert v_hat == pytest.approx(0.5, abs=1e-3)
    assert rp_hat == pytest.approx(0.1, abs=1e-3)


def test_recover_params_examples():
    assert recover_params(0.5, 0.0, 1.0) == pytest.approx((1.0, 1.0))
    assert recover_params(0.1, 0.1, 1.0) == pytest.approx((9.0, 1.5))
    rho, K = recover_params(0.25, 0.0455, 1.0)
    assert rho == pytest.approx(3.0)
    assert K == pytest.approx(1.2, abs=1e-2)
    # size is read relative to the stake
    assert recover_params(0.1, 0.2, 2.0) == pytest.approx((9.0, 1.5))


def test_recover_params_domain_errors():
    with pytest.raises(InputError):
        recover_params(0.6, 0.1, 1.0)
    with pytest.raises(InputError):
        recover_params(0.0, 0.1, 1.0)
    with pytest.raises(InputError):
        recover_params(0.1, -0.01, 1.0)
    with pytest.raises(InputError):
        recover_params(0.1, 0.5, 1.0)
    with pytest.raises(InputError):
        recover_params(0.1, 0.1, 0.0)


@given(rho=st.floats(1.0, 50.0), K=st.floats(1.0, 3.0), s=st.floats(0.1, 10.0))
def test_recovery_inverts_the_peak_formulas(rho, K, s):
    v, rp = lowrisk_peak(rho, K, s)
    rho_hat, K_hat = recover_params(v, rp, s)
    assert rho_hat == pytest.approx(rho, rel=1e-9)
    assert K_hat == pytest.approx(K, rel=1e-9)


def test_recovery_sees_the_folded_bias_when_below_one():
    # a rho below one peaks at the mirror location, so its reciprocal is
    # what any level-based measurement can identify
    v, rp = lowrisk_peak(0.5, 1.5, 1.0)
    rho_hat, K_hat = recover_params(v, rp, 1.0)
    assert rho_hat == pytest.approx(2.0, rel=1e-12)
    assert K_hat == pytest.approx(1.5, rel=1e-12)


def test_recovery_is_monotone():
    rhos = [recover_params(v, 0.1, 1.0)[0] for v in (0.05, 0.1, 0.2, 0.4)]
    assert all(a > b for a, b in zip(rhos, rhos[1:]))
    Ks = [recover_params(0.1, r, 1.0)[1] for r in (0.0, 0.1, 0.2, 0.4)]
    assert all(a < b for a, b in zip(Ks, Ks[1:]))


def test_flat_level_falls_back_to_the_unpriced_reading():
    v = np.linspace(0.05, 0.45, 21)
    rng = np.random.default_rng(3)
    noise = _curve(v, rng.normal(0.0, 0.005, len(v)), se=0.005)
    v_hat, rp_hat, stats, flags = _estimate_from_curve(noise, 50, lambda: 0.12, lenient=False)
    assert flags == ["no_significant_peak"]
    assert v_hat == 0.12
    assert 0.0 <= rp_hat <= 0.005


def test_flat_but_significant_level_uses_the_best_lcb_bin():
    v = np.linspace(0.05, 0.45, 21)
    level = _curve(v, np.full(len(v), 0.08), se=0.01)
    v_hat, rp_hat, stats, flags = _estimate_from_curve(level, 50, lambda: 0.0, lenient=False)
    assert flags == ["peak_shape_unresolved"]
    assert rp_hat == pytest.approx(0.08)
    assert 0.05 <= v_hat <= 0.45


def test_significant_shape_defects_propagate_unless_lenient():
    v = np.linspace(0.05, 0.45, 21)
    two_bumps = 0.08 - 1.0 * np.minimum((v - 0.13) ** 2, (v - 0.37) ** 2)
    bumpy = _curve(v, two_bumps, se=1e-4)
    with pytest.raises(ShapeError, match="multiple peaks"):
        _estimate_from_curve(bumpy, 50, lambda: 0.1, lenient=False)
    v_hat, rp_hat, _, flags = _estimate_from_curve(bumpy, 50, lambda: 0.1, lenient=True)
    assert flags == ["no_significant_peak"]
    assert v_hat == 0.1


def test_roundtrip_degenerate_unpriced_market():
    cfg = make_config(n_assets=20_000, rho=9.0, K=1.0)
    res = roundtrip(cfg, ACCEPT_SEED, n_boot=0, threads=4)
    assert 0.95 <= res.K_hat <= 1.05
    assert "no_significant_peak" in res.diagnostics["flags"]
    # location falls back to the prior point; rho is not identified here
    assert 0.05 <= res.v_max_hat <= 0.15


def test_roundtrip_degenerate_unbiased_unpriced_market():
    cfg = make_config(n_assets=20_000, rho=1.0, K=1.0)
    res = roundtrip(cfg, ACCEPT_SEED, n_boot=0, threads=4)
    assert 0.95 <= res.K_hat <= 1.05
    assert 0.9 <= res.rho_hat <= 1.3
    assert "no_significant_peak" in res.diagnostics["flags"]
    assert "no_in_window_epoch" in res.diagnostics["flags"]


def test_roundtrip_flat_topped_boundary_peak():
    cfg = make_config(n_assets=20_000, rho=1.0, K=1.5)
    res = roundtrip(cfg, ACCEPT_SEED, t=1.2, n_boot=0, threads=4)
    assert "peak_shape_unresolved" in res.diagnostics["flags"]
    assert 1.3 <= res.K_hat <= 1.9


def test_roundtrip_raises_with_curve_attached_when_data_is_too_thin():
    cfg = make_config(n_assets=300)
    with pytest.raises(ShapeError, match="fewer than 5") as exc:
        roundtrip(cfg, 1, n_boot=0)
    assert isinstance(exc.value.diagnostics["curve"], CohortCurve)


def test_errors_shrink_with_panel_size():
    # consistency: across paired seeds, the larger panel wins on median error
    errs = {10_000: [], 100_000: []}
    for seed in range(1, 21):
        for n in errs:
            cfg = make_config(n_assets=n)
            res = roundtrip(cfg, seed, n_boot=0, threads=4)
            errs[n].append((abs(res.K_hat - 1.5), abs(res.rho_hat - 9.0)))
    for j, name in enumerate(("K", "rho")):
        small = float(np.median([e[j] for e in errs[10_000]]))
        big = float(np.median([e[j] for e in errs[100_000]]))
        assert big <= small, (name, big, small)


def test_report_and_csv_round_trip(tmp_path):
    cfg = make_config(n_assets=20_000)
    res = roundtrip(cfg, ACCEPT_SEED, n_boot=40, threads=4)
    text = format_report(res)
    assert f"K_hat={res.K_hat:.6g}" in text
    assert "bootstrap 95% CIs" in text
    assert "rho_hat" in text

    path = tmp_path / "roundtrip.csv"
    write_roundtrip_csv(path, [res])
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [
        "K_true", "rho_true", "K_hat", "rho_hat", "v_max", "rp_max",
        "K_ci_lo", "K_ci_hi", "rho_ci_lo", "rho_ci_hi", "n_assets", "seed",
    ]
    assert len(rows) == 2
    assert float(rows[1][2]) == res.K_hat
    assert float(rows[1][6]) == res.diagnostics["K_ci"][0]
    assert int(rows[1][10]) == 20_000
