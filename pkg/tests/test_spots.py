import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irspot.spots import (
    DEFAULT_COLOR_RATIO,
    PerturbationConfig,
    SpotParams,
    colorize,
    gaussian_peak_kernel,
    half_brightness_radius,
    render_field,
    spot_brightness,
    spot_jacobian,
    synthesize,
)
from irspot.validation import ValidationError

from conftest import synthetic_face


def random_config(rng, n_spots=5, h=32, w=32):
    spots = tuple(
        SpotParams(px=float(rng.uniform(0, w - 1)), py=float(rng.uniform(0, h - 1)),
                   sigma=float(rng.uniform(1.5, 8.0)), s=float(rng.uniform(0.1, 2.0)))
        for _ in range(n_spots)
    )
    return PerturbationConfig(amp=float(rng.uniform(0.1, 1.0)), spots=spots)


class TestSpotBrightness:
    def test_center_equals_s_exactly(self):
        spot = SpotParams(px=12.0, py=7.0, sigma=3.3, s=1.7)
        assert spot_brightness(spot, 12.0, 7.0) == 1.7

    def test_zero_s(self):
        spot = SpotParams(px=5, py=5, sigma=2, s=0.0)
        xs = np.arange(10.0)
        assert np.all(spot_brightness(spot, xs, xs) == 0.0)

    def test_half_brightness_radius(self):
        # exp(-r^2 / (2 sigma^2)) = 1/2  at  r = sigma * sqrt(2 ln 2)
        sigma, s = 2.0, 1.0
        spot = SpotParams(px=0.0, py=0.0, sigma=sigma, s=s)
        r_half = sigma * math.sqrt(2.0 * math.log(2.0))
        assert half_brightness_radius(sigma) == pytest.approx(r_half, abs=0)
        value = spot_brightness(spot, r_half, 0.0)
        assert abs(value - s / 2.0) < 1e-12

    def test_monotone_in_distance(self):
        spot = SpotParams(px=0.0, py=0.0, sigma=4.0, s=2.0)
        radii = np.linspace(0, 30, 100)
        values = spot_brightness(spot, radii, np.zeros_like(radii))
        assert np.all(np.diff(values) <= 0)

    def test_alternate_kernel_injectable(self):
        from irspot.spots import gaussian_pdf_of_d2_kernel

        spot = SpotParams(px=0.0, py=0.0, sigma=2.0, s=1.0)
        # The pdf-of-squared-distance reading peaks at 1/(sigma sqrt(2 pi)),
        # not at s; it stays available as a swap-in strategy.
        center = spot_brightness(spot, 0.0, 0.0, kernel=gaussian_pdf_of_d2_kernel)
        assert center == pytest.approx(1.0 / (2.0 * math.sqrt(2.0 * math.pi)))
        field = render_field(PerturbationConfig(amp=1.0, spots=(spot,)), 8, 8,
                             kernel=gaussian_pdf_of_d2_kernel)
        assert field.shape == (8, 8)
        assert not np.array_equal(
            field, render_field(PerturbationConfig(amp=1.0, spots=(spot,)), 8, 8))


class TestRenderField:
    def test_all_zero_s(self):
        cfg = PerturbationConfig(amp=1.0, spots=(SpotParams(3, 3, 2, 0.0),
                                                 SpotParams(8, 8, 2, 0.0)))
        assert np.all(render_field(cfg, 16, 16) == 0.0)

    def test_two_identical_spots_double(self):
        one = PerturbationConfig(amp=1.0, spots=(SpotParams(10, 12, 3, 0.8),))
        two = PerturbationConfig(amp=1.0, spots=(SpotParams(10, 12, 3, 0.8),) * 2)
        assert np.array_equal(render_field(two, 24, 24), 2.0 * render_field(one, 24, 24))

    def test_against_naive_double_loop(self):
        rng = np.random.default_rng(11)
        cfg = random_config(rng, n_spots=5, h=32, w=32)
        field = render_field(cfg, 32, 32)
        naive = np.zeros((32, 32))
        for y in range(32):
            for x in range(32):
                acc = 0.0
                for sp in cfg.spots:
                    d2 = (sp.px - x) ** 2 + (sp.py - y) ** 2
                    acc += sp.s * math.exp(-d2 / (2.0 * sp.sigma**2))
                naive[y, x] = acc
        assert np.max(np.abs(field - naive)) < 1e-12

    def test_rotational_symmetry(self):
        cfg = PerturbationConfig(amp=1.0, spots=(SpotParams(16, 16, 4, 1.0),))
        field = render_field(cfg, 33, 33)
        assert field[16, 10] == field[16, 22]
        assert field[10, 16] == field[22, 16]
        assert field[12, 13] == field[20, 19]  # mirrored through the center


class TestColorize:
    def test_default_ratio_at_unit_field(self):
        field = np.zeros((4, 4))
        field[1, 2] = 1.0
        delta = colorize(field)
        assert tuple(delta[1, 2]) == DEFAULT_COLOR_RATIO

    def test_zero_field(self):
        assert np.all(colorize(np.zeros((3, 3))) == 0.0)

    def test_blue_green_ratio(self):
        rng = np.random.default_rng(2)
        field = rng.random((5, 5)) + 0.1
        delta = colorize(field)
        ratio = delta[:, :, 2] / delta[:, :, 1]
        assert np.max(np.abs(ratio - 0.1521 / 0.0533)) < 1e-12


class TestSynthesize:
    def test_amp_zero_identity(self, face_small):
        cfg = PerturbationConfig(amp=0.0, spots=(SpotParams(10, 10, 3, 1.0),))
        assert np.array_equal(synthesize(face_small, cfg), face_small)

    def test_linear_in_amp(self, face_small):
        spots = (SpotParams(20, 15, 4, 1.0), SpotParams(30, 30, 6, 0.5))
        d1 = synthesize(face_small, PerturbationConfig(amp=0.2, spots=spots)) - face_small
        d2 = synthesize(face_small, PerturbationConfig(amp=0.4, spots=spots)) - face_small
        assert np.max(np.abs(d2 - 2.0 * d1)) < 1e-15

    def test_single_spot_center_value_on_black(self):
        base = np.zeros((120, 160, 3))
        cfg = PerturbationConfig(amp=0.4, spots=(SpotParams(80, 60, 6, 1.0),))
        syn = synthesize(base, cfg)
        expected = 0.4 * np.asarray(DEFAULT_COLOR_RATIO)
        assert np.max(np.abs(syn[60, 80] - expected)) < 1e-15

    def test_values_not_clamped(self):
        base = np.full((20, 20, 3), 0.99)
        cfg = PerturbationConfig(amp=5.0, spots=(SpotParams(10, 10, 4, 10.0),))
        assert synthesize(base, cfg).max() > 1.0

    def test_additivity_of_spot_lists(self, face_small):
        a = (SpotParams(10, 10, 3, 1.2),)
        b = (SpotParams(25, 30, 5, 0.7), SpotParams(40, 12, 2, 1.0))
        amp = 0.6
        da = synthesize(face_small, PerturbationConfig(amp=amp, spots=a)) - face_small
        db = synthesize(face_small, PerturbationConfig(amp=amp, spots=b)) - face_small
        dab = synthesize(face_small, PerturbationConfig(amp=amp, spots=a + b)) - face_small
        assert np.max(np.abs(dab - (da + db))) < 1e-15

    def test_homogeneity_power_of_two_exact(self):
        # On a black base the perturbation IS the synthesized image, so the
        # power-of-two scaling property can be asserted bitwise.
        base = np.zeros((48, 48, 3))
        spots = (SpotParams(20, 15, 4, 0.9), SpotParams(36, 30, 6, 0.4))
        scaled = tuple(SpotParams(sp.px, sp.py, sp.sigma, 2.0 * sp.s) for sp in spots)
        d1 = synthesize(base, PerturbationConfig(amp=0.5, spots=spots))
        d2 = synthesize(base, PerturbationConfig(amp=0.5, spots=scaled))
        assert np.array_equal(d2, 2.0 * d1)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.25, 4.0, allow_nan=False))
    def test_homogeneity_general(self, k):
        base = synthetic_face(9, size=32)
        spots = (SpotParams(12, 9, 3, 0.8), SpotParams(22, 20, 5, 1.1))
        scaled = tuple(SpotParams(sp.px, sp.py, sp.sigma, k * sp.s) for sp in spots)
        d1 = synthesize(base, PerturbationConfig(amp=0.5, spots=spots)) - base
        dk = synthesize(base, PerturbationConfig(amp=0.5, spots=scaled)) - base
        assert np.max(np.abs(dk - k * d1)) < 1e-13

    def test_channel_ratio_exact(self, face_small):
        cfg = PerturbationConfig(amp=0.8, spots=(SpotParams(20, 20, 5, 1.3),))
        h, w = face_small.shape[:2]
        field = render_field(cfg, h, w)
        term = cfg.amp * colorize(field, cfg.color_ratio)
        # The added term carries the configured channel ratios bitwise, and
        # synthesis is exactly base + term.
        for c in range(3):
            assert np.array_equal(term[:, :, c], cfg.amp * (cfg.color_ratio[c] * field))
        assert np.array_equal(synthesize(face_small, cfg), face_small + term)
        nz = field > 1e-300
        cross = term[:, :, 2][nz] / term[:, :, 1][nz]
        assert np.max(np.abs(cross - 0.1521 / 0.0533)) < 1e-12


class TestJacobian:
    def test_amp_slice_is_colorized_field(self, face_small):
        rng = np.random.default_rng(5)
        cfg = random_config(rng, n_spots=3, h=48, w=48)
        jac = spot_jacobian(face_small, cfg)
        field = render_field(cfg, *face_small.shape[:2])
        assert np.array_equal(jac[0], colorize(field, cfg.color_ratio))

    def test_position_gradient_zero_at_center(self):
        base = np.zeros((21, 21, 3))
        cfg = PerturbationConfig(amp=1.0, spots=(SpotParams(10.0, 10.0, 3.0, 1.0),))
        jac = spot_jacobian(base, cfg)
        assert np.all(jac[1][10, 10] == 0.0)  # d/dpx at the peak
        assert np.all(jac[2][10, 10] == 0.0)  # d/dpy at the peak

    def test_s_gradient_defined_at_zero(self):
        base = np.zeros((15, 15, 3))
        cfg = PerturbationConfig(amp=1.0, spots=(SpotParams(7, 7, 2.0, 0.0),))
        jac = spot_jacobian(base, cfg)
        assert jac[4][7, 7, 0] == pytest.approx(DEFAULT_COLOR_RATIO[0])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        base = synthetic_face(3, size=40)
        h_step = 1e-4
        for _ in range(3):
            cfg = random_config(rng, n_spots=2, h=40, w=40)
            jac = spot_jacobian(base, cfg)
            names = ["amp"] + [f"{i}.{a}" for i in range(2)
                               for a in ("px", "py", "sigma", "s")]
            for k, name in enumerate(names):
                up = _perturb(cfg, k, +h_step)
                dn = _perturb(cfg, k, -h_step)
                fd = (synthesize(base, up) - synthesize(base, dn)) / (2 * h_step)
                denom = max(np.max(np.abs(fd)), 1e-12)
                assert np.max(np.abs(jac[k] - fd)) / denom < 1e-4, name


def _perturb(cfg: PerturbationConfig, k: int, delta: float) -> PerturbationConfig:
    if k == 0:
        return PerturbationConfig(amp=cfg.amp + delta, spots=cfg.spots,
                                  color_ratio=cfg.color_ratio)
    i, off = divmod(k - 1, 4)
    fieldname = ("px", "py", "sigma", "s")[off]
    spots = list(cfg.spots)
    sp = spots[i]
    spots[i] = SpotParams(**{**sp.to_dict(), fieldname: getattr(sp, fieldname) + delta})
    return PerturbationConfig(amp=cfg.amp, spots=tuple(spots), color_ratio=cfg.color_ratio)


class TestConfigValidation:
    def test_sigma_positive(self):
        with pytest.raises(ValidationError):
            PerturbationConfig(amp=1, spots=(SpotParams(0, 0, 0.0, 1),)).validate()

    def test_s_non_negative(self):
        with pytest.raises(ValidationError):
            PerturbationConfig(amp=1, spots=(SpotParams(0, 0, 1, -0.1),)).validate()

    def test_empty_spots(self):
        with pytest.raises(ValidationError):
            PerturbationConfig(amp=1, spots=()).validate()

    def test_amp_non_negative(self):
        with pytest.raises(ValidationError):
            PerturbationConfig(amp=-1, spots=(SpotParams(0, 0, 1, 1),)).validate()

    def test_color_ratio_positive(self):
        with pytest.raises(ValidationError):
            PerturbationConfig(amp=1, spots=(SpotParams(0, 0, 1, 1),),
                               color_ratio=(0.1, 0.0, 0.1)).validate()

    def test_margin(self):
        cfg = PerturbationConfig(amp=1, spots=(SpotParams(px=-7, py=5, sigma=2, s=1),))
        with pytest.raises(ValidationError):
            cfg.validate(height=20, width=20)  # margin is 3 sigma = 6 px
        ok = PerturbationConfig(amp=1, spots=(SpotParams(px=-5, py=5, sigma=2, s=1),))
        ok.validate(height=20, width=20)

    def test_json_roundtrip(self):
        rng = np.random.default_rng(7)
        cfg = random_config(rng)
        back = PerturbationConfig.from_json(cfg.to_json())
        assert back == cfg

    def test_wire_format_fields(self):
        cfg = PerturbationConfig(amp=0.5, spots=(SpotParams(1, 2, 3, 4),))
        data = json.loads(cfg.to_json())
        assert set(data) == {"amp", "color_ratio", "spots"}
        assert set(data["spots"][0]) == {"px", "py", "sigma", "s"}
