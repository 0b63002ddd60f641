import math

import numpy as np
import pytest
from scipy import special

from litho_sampler.errors import DomainError
from litho_sampler.optics import (
    LithoSystem,
    airy_intensity,
    airy_profile,
    aperture_from_lens,
    bessel_j,
    encircled_energy,
    encircled_fraction,
    energy_report,
    isolation_distance,
    j1_zero,
    min_pitch,
    numerical_aperture,
    optical_argument,
    snap_to_grid,
)

EUV = LithoSystem(wavelength_nm=13.5, numerical_aperture=0.35)


@pytest.mark.parametrize("order", [0, 1])
def test_bessel_matches_scipy(order):
    for x in np.linspace(-40.0, 40.0, 321):
        assert bessel_j(order, float(x)) == pytest.approx(special.jv(order, x), abs=1e-9)


def test_bessel_known_values():
    assert bessel_j(0, 0.0) == 1.0
    assert bessel_j(1, 0.0) == 0.0
    assert bessel_j(1, -2.0) == pytest.approx(-bessel_j(1, 2.0))
    assert bessel_j(0, -2.0) == pytest.approx(bessel_j(0, 2.0))


def test_bessel_rejects_bad_input():
    with pytest.raises(DomainError):
        bessel_j(2, 1.0)
    with pytest.raises(DomainError):
        bessel_j(0, math.nan)


def test_j1_zeros_match_scipy():
    expected = special.jn_zeros(1, 6)
    for m, z in enumerate(expected, start=1):
        assert j1_zero(m) == pytest.approx(z, abs=1e-9)
    with pytest.raises(DomainError):
        j1_zero(0)


def test_isolation_distance_for_euv():
    d = isolation_distance(EUV)
    assert d == pytest.approx(233.36, abs=0.005)
    assert snap_to_grid(d) == 230


def test_min_pitch_and_apertures():
    assert min_pitch(EUV) == pytest.approx(13.5 / 0.35)
    assert numerical_aperture(1.0, 0.35) == pytest.approx(0.35)
    assert aperture_from_lens(70.0, 100.0) == pytest.approx(0.35)
    with pytest.raises(DomainError):
        numerical_aperture(1.0, 1.5)
    with pytest.raises(DomainError):
        aperture_from_lens(0.0, 100.0)


def test_litho_system_validation():
    with pytest.raises(DomainError):
        LithoSystem(wavelength_nm=0.0, numerical_aperture=0.35)
    with pytest.raises(DomainError):
        LithoSystem(wavelength_nm=13.5, numerical_aperture=1.2)


def test_airy_profile_center_and_dark_ring():
    assert airy_profile(0.0) == 1.0
    assert airy_profile(0.0, 3.0) == 3.0
    assert airy_profile(j1_zero(1)) == pytest.approx(0.0, abs=1e-18)


def test_encircled_fraction_values():
    assert encircled_fraction(0.0) == pytest.approx(0.0, abs=1e-15)
    assert encircled_fraction(19.0) == pytest.approx(0.9673, abs=0.005)
    x = 7.3
    assert encircled_fraction(x) == pytest.approx(1 - special.j0(x) ** 2 - special.j1(x) ** 2, abs=1e-9)


def test_energy_report_covers_both_arguments():
    report = energy_report()
    assert report["x_nominal"] == 19.0
    assert report["x_sixth_zero"] == pytest.approx(special.jn_zeros(1, 6)[-1], abs=1e-9)
    assert 0.96 < report["energy_sixth_zero"] < 1.0


def test_optical_argument_domain():
    assert optical_argument(EUV, 0.0) == 0.0
    with pytest.raises(DomainError):
        optical_argument(EUV, 1.5)
    with pytest.raises(DomainError):
        optical_argument(EUV, -0.1)


def test_intensity_and_energy_through_system():
    assert airy_intensity(EUV, 0.0) == EUV.center_intensity
    energies = [encircled_energy(EUV, s) for s in np.linspace(0.0, 1e-3, 20)]
    assert all(0.0 <= e <= 1.0 for e in energies)


@pytest.mark.parametrize("order", [0, 1])
def test_bessel_tight_on_wide_range(order):
    xs = np.linspace(-50.0, 50.0, 2001)
    ours = np.array([bessel_j(order, float(x)) for x in xs])
    assert np.max(np.abs(ours - special.jv(order, xs))) < 1e-10


def test_bessel_derivative_recurrence():
    h = 1e-5
    for x in np.linspace(0.5, 40.0, 100):
        slope = (bessel_j(1, x + h) - bessel_j(1, x - h)) / (2.0 * h)
        assert slope == pytest.approx(bessel_j(0, x) - bessel_j(1, x) / x, rel=1e-5, abs=1e-9)


def test_encircled_fraction_stays_in_unit_interval():
    values = np.array([encircled_fraction(float(x)) for x in np.linspace(0.0, 100.0, 1001)])
    assert np.all((values >= 0.0) & (values <= 1.0))
    assert 0.97 < encircled_fraction(50.0) < 1.0


def test_airy_intensity_is_never_negative():
    assert all(airy_intensity(EUV, float(s)) >= 0.0 for s in np.linspace(0.0, 1.0, 2001))


def test_isolation_distance_scales_with_wavelength_over_aperture():
    base = isolation_distance(EUV)
    wide = LithoSystem(wavelength_nm=13.5, numerical_aperture=0.7)
    long_wave = LithoSystem(wavelength_nm=27.0, numerical_aperture=0.35)
    assert isolation_distance(wide) == pytest.approx(base / 2.0)
    assert isolation_distance(long_wave) == pytest.approx(base * 2.0)
    for system in (EUV, wide, long_wave):
        assert isolation_distance(system) * system.numerical_aperture / system.wavelength_nm == pytest.approx(6.05)


def test_min_pitch_for_immersion_argon_fluoride():
    arf = LithoSystem(wavelength_nm=193.0, numerical_aperture=1.35, refraction_index=1.44)
    assert min_pitch(arf) == pytest.approx(142.96, abs=0.01)


def test_zero_aperture_is_rejected():
    with pytest.raises(DomainError):
        LithoSystem(wavelength_nm=13.5, numerical_aperture=0.0)
