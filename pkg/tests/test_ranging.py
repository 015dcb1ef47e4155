"""Tests for Ranging Service"""

import math

import numpy as np
import pytest

from src.models.ranging import OFFICE_ANCHOR_PARAMS, AnchorRangingParams, RangingParams, ReferencePoint
from src.services.ranging_service import (
    evaluate_ranging_models,
    fit_ldpl,
    fit_nlr,
    fit_ranging_params,
    forward_ldpl_power,
    hybrid_range,
    ldpl_range,
    load_ranging_params,
    los_threshold_power,
    nlr_range,
    save_ranging_params,
)

AN1 = OFFICE_ANCHOR_PARAMS[0]
AN3 = OFFICE_ANCHOR_PARAMS[2]


def params(alpha=1.0, beta=-0.05, gamma=2.7, p_r0=-30.0, an_id="X"):
    return AnchorRangingParams(an_id=an_id, alpha=alpha, beta=beta, gamma=gamma, p_r0=p_r0)


class TestLdpl:
    """Log-distance path loss inversion"""

    def test_reference_power_is_one_meter(self):
        """Reference power maps to 1 m"""
        assert ldpl_range(-30, params()) == pytest.approx(1.0)

    def test_ten_meters(self):
        """27 dB below reference is 10 m"""
        assert ldpl_range(-57, params()) == pytest.approx(10.0)

    def test_office_an1(self):
        """Calibrated AN1 constants invert a 13.5 dB drop to sqrt(10) m"""
        assert ldpl_range(-43.5, AN1) == pytest.approx(10 ** 0.5, rel=1e-9)

    def test_inverse_of_forward(self):
        """Range inversion undoes the forward power model"""
        p = params()
        for r in np.geomspace(0.1, 100, 50):
            assert ldpl_range(forward_ldpl_power(r, p), p) == pytest.approx(r, rel=1e-12)

    def test_monotone(self):
        """Weaker power never maps to a shorter range"""
        powers = np.linspace(-100, -20, 40)
        ranges = [ldpl_range(p, AN1) for p in powers]
        assert all(a > b for a, b in zip(ranges, ranges[1:]))


class TestNlr:
    """Nonlinear regression model"""

    def test_zero_power(self):
        """0 dBm gives alpha metres"""
        assert nlr_range(0, params(alpha=1, beta=-0.05)) == pytest.approx(1.0)

    def test_office_an1(self):
        """Calibrated AN1 exponential model at -60 dBm"""
        assert nlr_range(-60, AN1) == pytest.approx(11.05, abs=0.01)

    def test_office_an3(self):
        """Calibrated AN3 exponential model at -30 dBm"""
        assert nlr_range(-30, AN3) == pytest.approx(1.736, abs=0.001)

    def test_clamped_input(self):
        """Power below the RSSI floor is clamped first"""
        assert nlr_range(-150, AN1) == nlr_range(-120, AN1)


class TestHybrid:
    """LOS/NLOS switch on the 5 m threshold power"""

    def test_threshold_power(self):
        """Threshold power sits 10*gamma*log10(5) dB below the reference"""
        assert los_threshold_power(params(), 5.0) == pytest.approx(-30 - 27 * math.log10(5), abs=1e-9)
        assert los_threshold_power(params(), 5.0) == pytest.approx(-48.8722, abs=1e-4)

    def test_los_branch(self):
        """Strong power uses the log-distance model"""
        p = params()
        assert hybrid_range(-40, p, 5.0) == ldpl_range(-40, p)

    def test_nlos_branch(self):
        """Weak power uses the exponential model"""
        assert hybrid_range(-60, AN1, 5.0) == nlr_range(-60, AN1)
        assert hybrid_range(-60, AN1, 5.0) == pytest.approx(11.05, abs=0.01)

    def test_closed_loop_below_threshold(self):
        """Noiseless power inside 5 m inverts exactly"""
        p = AnchorRangingParams.from_ldpl("X", 2.7, -30.0)
        for r in np.linspace(0.1, 4.999, 40):
            assert hybrid_range(forward_ldpl_power(r, p), p) == pytest.approx(r, abs=1e-9)


class TestFitNlr:
    """Least-squares fit of the exponential model"""

    def test_exact_recovery(self):
        """Noiseless samples recover alpha and beta"""
        rssi = np.linspace(-90, -30, 25)
        reference = [(2.0 * math.exp(-0.04 * p), p) for p in rssi]
        alpha, beta = fit_nlr(reference)
        assert alpha == pytest.approx(2.0, abs=1e-9)
        assert beta == pytest.approx(-0.04, abs=1e-9)

    def test_two_points(self):
        """Two distinct powers determine the fit"""
        alpha, beta = fit_nlr([(1.0, 0.0), (math.e, -25.0)])
        assert beta == pytest.approx(-0.04, abs=1e-12)
        assert alpha == pytest.approx(1.0, abs=1e-12)

    def test_noisy(self):
        """Multiplicative noise keeps beta within 10%"""
        rng = np.random.default_rng(4)
        rssi = rng.uniform(-90, -30, 100)
        reference = [(2.0 * math.exp(-0.04 * p + rng.normal(0, 0.05)), p) for p in rssi]
        _, beta = fit_nlr(reference)
        assert beta == pytest.approx(-0.04, rel=0.1)

    def test_underdetermined(self):
        """Fewer than two distinct powers cannot be fitted"""
        with pytest.raises(ValueError, match="underdetermined fit"):
            fit_nlr([(1.0, -40.0)])
        with pytest.raises(ValueError, match="underdetermined fit"):
            fit_nlr([(1.0, -40.0), (2.0, -40.0)])


class TestFitRangingParams:
    """Per-anchor calibration from reference points"""

    def test_ldpl_recovery(self):
        """Noiseless samples recover gamma and reference power"""
        truth = params(gamma=3.1, p_r0=-35.0)
        reference = [(r, forward_ldpl_power(r, truth)) for r in (1, 2, 4, 8, 16)]
        gamma, p_r0 = fit_ldpl(reference)
        assert gamma == pytest.approx(3.1)
        assert p_r0 == pytest.approx(-35.0)

    def test_grouped_by_anchor(self):
        """Reference points are fitted per anchor"""
        truth = {a: AnchorRangingParams.from_ldpl(a, g, -30.0) for a, g in (("A", 2.0), ("B", 3.0))}
        reference = [
            ReferencePoint(an_id=a, true_distance_m=r, rssi_dbm=forward_ldpl_power(r, p))
            for a, p in truth.items() for r in (1.0, 3.0, 7.0, 12.0)
        ]
        fitted = fit_ranging_params(reference)
        assert set(fitted.anchors) == {"A", "B"}
        for a, p in truth.items():
            assert fitted[a].beta == pytest.approx(p.beta)
            assert fitted[a].gamma == pytest.approx(p.gamma)

    def test_unknown_anchor(self):
        """Lookup of an absent anchor raises"""
        with pytest.raises(ValueError, match="no ranging parameters"):
            RangingParams.from_rows([params()])["missing"]

    def test_error_stats(self):
        """Error statistics cover all three models in order"""
        p = AnchorRangingParams.from_ldpl("A", 2.7, -30.0)
        reference = [
            ReferencePoint(an_id="A", true_distance_m=r, rssi_dbm=forward_ldpl_power(r, p))
            for r in (1.0, 2.0, 6.0, 9.0)
        ]
        stats = evaluate_ranging_models(RangingParams.from_rows([p]), reference)
        assert [s.model for s in stats] == ["ldpl", "nlr", "hybrid"]
        assert all(s.mean_abs_error_m < 1e-9 for s in stats)

    def test_params_csv(self, tmp_path):
        """Ranging parameters survive a CSV round trip"""
        path = tmp_path / "params.csv"
        original = RangingParams.from_rows(OFFICE_ANCHOR_PARAMS)
        save_ranging_params(original, path)
        loaded = load_ranging_params(path)
        assert list(loaded.anchors) == [p.an_id for p in OFFICE_ANCHOR_PARAMS]
        assert loaded["AN3"].alpha == pytest.approx(0.3701)
