"""Lithography proximity formulas.

Diffraction of a contact hole resembles the Airy disk; the fraction of its
energy collected inside an observation angle tells how far apart two shapes
must be before they stop influencing each other's aerial image. That distance
sizes the clip margin used by dispatch.
"""

import math
from dataclasses import dataclass
from typing import Dict

from .errors import DomainError

SERIES_LIMIT = 12.0
ISOLATION_FACTOR = 6.05
NOMINAL_ZERO_ARGUMENT = 19.0
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class LithoSystem:
    """Imaging system: wavelength, numerical aperture, pupil radius (all nm)."""
    wavelength_nm: float
    numerical_aperture: float
    refraction_index: float = 1.0
    pupil_radius_nm: float = 1000.0
    center_intensity: float = 1.0

    def __post_init__(self):
        if not self.wavelength_nm > 0:
            raise DomainError(f"wavelength must be > 0, got {self.wavelength_nm}", "optics", "LithoSystem")
        if not 0 < self.numerical_aperture <= self.refraction_index:
            raise DomainError(
                f"NA must lie in (0, n={self.refraction_index}], got {self.numerical_aperture}",
                "optics", "LithoSystem")
        if not self.pupil_radius_nm > 0:
            raise DomainError(f"pupil radius must be > 0, got {self.pupil_radius_nm}", "optics", "LithoSystem")
        if not self.center_intensity > 0:
            raise DomainError(f"I0 must be > 0, got {self.center_intensity}", "optics", "LithoSystem")


def _bessel_series(order: int, x: float) -> float:
    half = 0.5 * x
    term = half ** order / math.factorial(order)
    total = term
    m = 0
    while True:
        m += 1
        term *= -(half * half) / (m * (m + order))
        total += term
        if abs(term) < 1e-17 * max(1.0, abs(total)) and m > half:
            return total


def _bessel_asymptotic(order: int, x: float) -> float:
    # Hankel expansion, truncated at its smallest term.
    mu = 4.0 * order * order
    p, q = 1.0, 0.0
    term = 1.0
    k = 0
    while True:
        k += 1
        nxt = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(nxt) >= abs(term) or nxt == 0.0:
            break
        term = nxt
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2:
            q += sign * term
        else:
            p += sign * term
        if abs(term) < 1e-17:
            break
    chi = x - (0.5 * order + 0.25) * math.pi
    return _SQRT_2_OVER_PI / math.sqrt(x) * (p * math.cos(chi) - q * math.sin(chi))


def bessel_j(order: int, x: float) -> float:
    """Bessel function of the first kind J_order(x) for order 0 or 1.

    Power series up to |x| = 12, Hankel asymptotic expansion beyond.
    """
    if order not in (0, 1):
        raise DomainError(f"order must be 0 or 1, got {order}", "optics", "bessel_j")
    if not math.isfinite(x):
        raise DomainError(f"x must be finite, got {x}", "optics", "bessel_j")
    ax = abs(x)
    value = _bessel_series(order, ax) if ax <= SERIES_LIMIT else _bessel_asymptotic(order, ax)
    # J0 is even, J1 is odd
    return -value if (order == 1 and x < 0) else value


def j1_zero(m: int) -> float:
    """m-th positive zero of J1 (McMahon guess, then bracketed bisection)."""
    if m < 1:
        raise DomainError(f"zero index must be >= 1, got {m}", "optics", "j1_zero")
    beta = (m + 0.25) * math.pi
    guess = beta - 3.0 / (8.0 * beta)
    lo, hi = guess - 1.0, guess + 1.0
    f_lo = bessel_j(1, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = bessel_j(1, mid)
        if f_mid == 0.0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo < 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def min_pitch(sys: LithoSystem) -> float:
    """Smallest design pitch that still captures the 0 and +-1 orders: p = lambda / NA."""
    return sys.wavelength_nm / sys.numerical_aperture


def numerical_aperture(refraction_index: float, sin_theta_max: float) -> float:
    """NA = n sin(theta_max)."""
    if refraction_index <= 0 or not 0 < sin_theta_max <= 1:
        raise DomainError("need n > 0 and sin(theta_max) in (0, 1]", "optics", "numerical_aperture")
    return refraction_index * sin_theta_max


def aperture_from_lens(diameter_nm: float, focal_length_nm: float) -> float:
    """NA = D / 2f for a lens of diameter D and focal length f."""
    if diameter_nm <= 0 or focal_length_nm <= 0:
        raise DomainError("lens diameter and focal length must be > 0", "optics", "aperture_from_lens")
    return diameter_nm / (2.0 * focal_length_nm)


def wavenumber(sys: LithoSystem) -> float:
    return 2.0 * math.pi / sys.wavelength_nm


def optical_argument(sys: LithoSystem, sin_theta: float) -> float:
    """x = k r sin(theta); sin(theta) must lie in [0, 1]."""
    if not math.isfinite(sin_theta) or not 0.0 <= sin_theta <= 1.0:
        raise DomainError(f"sin(theta) must lie in [0, 1], got {sin_theta}", "optics", "optical_argument")
    return wavenumber(sys) * sys.pupil_radius_nm * sin_theta


def airy_profile(x: float, i0: float = 1.0) -> float:
    """(2 J1(x) / x)^2 I0, with the x -> 0 limit I0."""
    if x == 0.0:
        return i0
    ratio = 2.0 * bessel_j(1, x) / x
    return ratio * ratio * i0


def encircled_fraction(x: float) -> float:
    """1 - J0(x)^2 - J1(x)^2: energy fraction inside the observation angle."""
    j0 = bessel_j(0, x)
    j1 = bessel_j(1, x)
    return 1.0 - j0 * j0 - j1 * j1


def airy_intensity(sys: LithoSystem, sin_theta: float) -> float:
    """Airy disk intensity at observation angle theta."""
    return airy_profile(optical_argument(sys, sin_theta), sys.center_intensity)


def encircled_energy(sys: LithoSystem, sin_theta: float) -> float:
    """Total Airy energy within observation angle theta, in [0, 1]."""
    return encircled_fraction(optical_argument(sys, sin_theta))


def isolation_distance(sys: LithoSystem) -> float:
    """Minimum distance at which two shapes print as isolated: D = 6.05 lambda / NA."""
    return ISOLATION_FACTOR * sys.wavelength_nm / sys.numerical_aperture


def snap_to_grid(value_nm: float, grid_nm: int = 10) -> int:
    """Floor a length onto the layout grid (233.36 nm -> 230 nm)."""
    return int(math.floor(value_nm / grid_nm)) * grid_nm


def energy_report() -> Dict[str, float]:
    """Collected energy at x = 19 and at the sixth dark ring (sixth J1 zero)."""
    sixth = j1_zero(6)
    return {
        "x_nominal": NOMINAL_ZERO_ARGUMENT,
        "energy_nominal": encircled_fraction(NOMINAL_ZERO_ARGUMENT),
        "x_sixth_zero": sixth,
        "energy_sixth_zero": encircled_fraction(sixth),
    }
