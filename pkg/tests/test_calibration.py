import math

import numpy as np
import pytest

from irspot.calibration import (
    CalibrationReport,
    brightness_check,
    calibrate_once,
    locate_spot,
    size_check,
)
from irspot.image import diff, quantize_u8
from irspot.oracle import ReferenceEmbeddingOracle, distance
from irspot.spots import (
    PerturbationConfig,
    SpotParams,
    half_brightness_radius,
    synthesize,
)
from irspot.attack import objective
from irspot.validation import ValidationError

from conftest import synthetic_face

ORACLE = ReferenceEmbeddingOracle()

TARGET = PerturbationConfig(
    amp=0.6,
    spots=(SpotParams(60.0, 50.0, 6.0, 1.0),
           SpotParams(100.0, 80.0, 8.0, 1.2),
           SpotParams(70.0, 110.0, 5.0, 0.8)))


def shift_spots(cfg: PerturbationConfig, dx: float, dy: float) -> PerturbationConfig:
    spots = tuple(SpotParams(sp.px + dx, sp.py + dy, sp.sigma, sp.s)
                  for sp in cfg.spots)
    return PerturbationConfig(amp=cfg.amp, spots=spots, color_ratio=cfg.color_ratio)


def scale_spots(cfg: PerturbationConfig, s_factor=1.0, sigma_factor=1.0):
    spots = tuple(SpotParams(sp.px, sp.py, sp.sigma * sigma_factor, sp.s * s_factor)
                  for sp in cfg.spots)
    return PerturbationConfig(amp=cfg.amp, spots=spots, color_ratio=cfg.color_ratio)


def realize(off: np.ndarray, cfg: PerturbationConfig) -> np.ndarray:
    """Quantized clamped synthesis: what a camera would hand the analyzer."""
    return quantize_u8(synthesize(off, cfg)) / 255.0


class TestLocate:
    def test_exact_center_recovered(self, face):
        on = realize(face, TARGET)
        delta = diff(on, face)
        for spot in TARGET.spots:
            finding = locate_spot(delta, spot, color_ratio=TARGET.color_ratio)
            assert finding.found
            assert finding.detected_center == (spot.px, spot.py)
            assert finding.offset_vector == (0.0, 0.0)
            assert not finding.low_confidence

    def test_planted_shift_recovered(self, face):
        shifted = shift_spots(TARGET, 4.0, -3.0)
        delta = diff(realize(face, shifted), face)
        for spot, moved in zip(TARGET.spots, shifted.spots):
            finding = locate_spot(delta, spot, color_ratio=TARGET.color_ratio)
            assert finding.found
            dx = finding.detected_center[0] - moved.px
            dy = finding.detected_center[1] - moved.py
            assert math.hypot(dx, dy) <= 1.0
            # Offset points from detected back toward the theoretical center.
            assert finding.offset_vector[0] == pytest.approx(-4.0, abs=1.0)
            assert finding.offset_vector[1] == pytest.approx(3.0, abs=1.0)

    def test_pure_noise_flagged_low_confidence(self):
        rng = np.random.default_rng(0)
        noise = rng.uniform(-0.005, 0.005, size=(160, 160, 3))
        spot = SpotParams(80, 80, 6.0, 1.0)
        finding = locate_spot(noise, spot)
        assert finding.found
        assert finding.low_confidence

    def test_zero_diff_not_found(self):
        finding = locate_spot(np.zeros((64, 64, 3)), SpotParams(32, 32, 4, 1.0))
        assert not finding.found

    def test_window_clipped_warning(self, face):
        on = realize(face, TARGET)
        delta = diff(on, face)
        edge_spot = SpotParams(3.0, 50.0, 6.0, 1.0)
        finding = locate_spot(delta, edge_spot, search_radius=20)
        assert any("clipped" in w for w in finding.warnings)

    def test_zero_s_spot_not_found(self):
        finding = locate_spot(np.ones((32, 32, 3)), SpotParams(16, 16, 4, 0.0))
        assert not finding.found


class TestBrightness:
    def test_exact_render_ok(self, face):
        on = realize(face, TARGET)
        delta = diff(on, face)
        spot = TARGET.spots[0]
        measured, expected, verdict = brightness_check(
            delta, on, spot, (spot.px, spot.py), off=face, target=TARGET)
        assert verdict == "ok"
        assert measured == pytest.approx(expected, rel=0.05)

    @pytest.mark.parametrize("factor,verdict", [(2.0, "too_bright"), (0.5, "too_dim")])
    def test_scaled_s_verdicts(self, face, factor, verdict):
        realized = scale_spots(TARGET, s_factor=factor)
        on = realize(face, realized)
        delta = diff(on, face)
        spot = TARGET.spots[0]
        _, _, got = brightness_check(delta, on, spot, (spot.px, spot.py),
                                     off=face, target=TARGET)
        assert got == verdict

    def test_monotone_verdicts_never_flip_back(self, face):
        verdict_rank = {"too_dim": -1, "ok": 0, "too_bright": 1}
        spot = TARGET.spots[0]
        ranks = []
        for factor in (1.0, 1.1, 1.4, 2.0, 3.0):
            on = realize(face, scale_spots(TARGET, s_factor=factor))
            delta = diff(on, face)
            _, _, got = brightness_check(delta, on, spot, (spot.px, spot.py),
                                         off=face, target=TARGET)
            ranks.append(verdict_rank[got])
        assert ranks == sorted(ranks)
        assert ranks[-1] == 1


class TestSize:
    def test_exact_render_radius(self, face):
        sigma = 6.0
        cfg = PerturbationConfig(amp=0.6, spots=(SpotParams(80, 80, sigma, 1.0),))
        delta = diff(realize(face, cfg), face)
        measured, expected, verdict = size_check(delta, cfg.spots[0], (80.0, 80.0),
                                                 color_ratio=cfg.color_ratio)
        r_half = sigma * math.sqrt(2 * math.log(2))
        assert expected == pytest.approx(r_half, abs=1e-12)
        assert abs(measured - r_half) <= 0.5
        assert verdict == "ok"

    @pytest.mark.parametrize("factor,verdict", [(2.0, "too_large"), (0.5, "too_small")])
    def test_scaled_sigma_verdicts(self, face, factor, verdict):
        realized = scale_spots(TARGET, sigma_factor=factor)
        on = realize(face, realized)
        delta = diff(on, face)
        spot = TARGET.spots[1]
        moved = realized.spots[1]
        _, _, got = size_check(delta, spot, (moved.px, moved.py),
                               color_ratio=TARGET.color_ratio)
        assert got == verdict

    def test_zero_center_not_measurable(self):
        with pytest.raises(ValidationError):
            size_check(np.zeros((64, 64, 3)), SpotParams(32, 32, 5, 1.0), (32.0, 32.0))


class TestCalibrateOnce:
    def test_perfect_realization(self, face):
        on = realize(face, TARGET)
        vemb = ORACLE.embed(synthetic_face(2))
        report = calibrate_once(on, face, TARGET, vemb, ORACLE, timestamp="t0")
        assert len(report.spots) == 3
        for finding in report.spots:
            assert finding.found
            assert math.hypot(*finding.offset_vector) <= 1.0
            assert finding.brightness_verdict == "ok"
            assert finding.size_verdict == "ok"
        assert report.current_loss == pytest.approx(
            distance(ORACLE.embed(on), vemb), abs=0)
        assert report.timestamp == "t0"

    def test_planted_x_shift_offsets(self, face):
        shifted = shift_spots(TARGET, 5.0, 0.0)
        on = realize(face, shifted)
        report = calibrate_once(on, face, TARGET, None, ORACLE, timestamp="t0")
        for finding in report.spots:
            assert finding.found
            assert finding.offset_vector[0] == pytest.approx(-5.0, abs=1.0)
            assert finding.offset_vector[1] == pytest.approx(0.0, abs=1.0)

    def test_off_equals_on_nothing_found(self, face):
        report = calibrate_once(face, face, TARGET, None, ORACLE, timestamp="t0")
        assert all(not f.found for f in report.spots)

    def test_deterministic(self, face):
        on = realize(face, TARGET)
        vemb = ORACLE.embed(synthetic_face(2))
        r1 = calibrate_once(on, face, TARGET, vemb, ORACLE, timestamp="t0")
        r2 = calibrate_once(on, face, TARGET, vemb, ORACLE, timestamp="t0")
        assert r1.to_json() == r2.to_json()

    def test_offset_self_consistency(self, face):
        # Applying the reported offsets to the realized spots re-centers them.
        shifted = shift_spots(TARGET, 5.0, 3.0)
        on = realize(face, shifted)
        report = calibrate_once(on, face, TARGET, None, ORACLE, timestamp="t0")
        corrected_spots = []
        for finding, realized_spot in zip(report.spots, shifted.spots):
            corrected_spots.append(SpotParams(
                realized_spot.px + finding.offset_vector[0],
                realized_spot.py + finding.offset_vector[1],
                realized_spot.sigma, realized_spot.s))
        corrected = PerturbationConfig(amp=TARGET.amp, spots=tuple(corrected_spots),
                                       color_ratio=TARGET.color_ratio)
        on2 = realize(face, corrected)
        report2 = calibrate_once(on2, face, TARGET, None, ORACLE, timestamp="t0")
        for finding in report2.spots:
            assert math.hypot(*finding.offset_vector) < 1.0

    def test_size_mismatch_rejected(self, face):
        with pytest.raises(ValidationError):
            calibrate_once(face, synthetic_face(1, size=80), TARGET, None, ORACLE)

    def test_oracle_error_surfaces_in_loss(self, face):
        from irspot.oracle import OracleError

        class Failing:
            def embed(self, img):
                raise OracleError("down")

        on = realize(face, TARGET)
        vemb = ORACLE.embed(face)
        report = calibrate_once(on, face, TARGET, vemb, Failing(), timestamp="t0")
        assert report.current_loss is None
        assert "down" in report.loss_error
        assert all(f.found for f in report.spots)  # analysis still ran

    def test_report_json_shape(self, face):
        on = realize(face, TARGET)
        report = calibrate_once(on, face, TARGET, None, ORACLE, timestamp="t0")
        data = report.to_dict()
        assert set(data) == {"timestamp", "current_loss", "loss_error", "spots"}
        assert {f["spot_index"] for f in data["spots"]} == {0, 1, 2}
