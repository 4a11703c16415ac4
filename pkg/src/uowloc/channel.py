"""Seawater optical channel model.

Wavelength-dependent absorption, scattering, and extinction coefficients
for natural waters, plus the line-of-sight link budget that maps transmit
power to received power for a collimated underwater optical link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import require

# Specific absorption of fulvic and humic acid (m^2/mg) and their
# spectral exponents (1/nm). The exponents are the canonical values for
# this water model; both are overridable per WaterModel instance.
B_FULVIC = 35.959
B_HUMIC = 18.828
ALPHA_FULVIC = 0.0189
ALPHA_HUMIC = 0.01105

# Pure sea water absorption (1/m) tabulated every 10 nm over 400-700 nm,
# from the published integrating-cavity measurements of Pope & Fry (1997).
# Linear interpolation in between; wavelengths outside raise.
_B_WA_NM = np.arange(400.0, 701.0, 10.0)
_B_WA = np.array([
    0.00663, 0.00473, 0.00454, 0.00495, 0.00635, 0.00922, 0.00979, 0.01060,
    0.01270, 0.01500, 0.02040, 0.03250, 0.04090, 0.04340, 0.04740, 0.05650,
    0.06190, 0.06950, 0.08960, 0.13510, 0.22240, 0.26440, 0.27550, 0.29160,
    0.31080, 0.34000, 0.41000, 0.43900, 0.46500, 0.51600, 0.62400,
])

# Preset beam extinction coefficients (1/m) at 532 nm for the four
# standard water types; values follow the usual literature figures for
# pure sea, clear ocean, coastal, and harbor water.
WATER_PRESETS = {
    "pure-sea": 0.056,
    "clear-ocean": 0.151,
    "coastal": 0.305,
    "harbor": 2.17,
}


@dataclass(frozen=True)
class WaterModel:
    """Water optical properties at a single operating wavelength.

    lambda_nm: operating wavelength (nm), green 532 nm by default.
    c_c: chlorophyll concentration (mg/m^3); contributes only when a
        specific-absorption curve is supplied via ``chlorophyll_curve``.
    c_e: dissolved-matter concentration parameter, limited to [0, 12].
    c_o: normalization constant for the concentration ratio, default 1.
    water_preset: one of pure-sea, clear-ocean, coastal, harbor, custom.
        Non-custom presets pin the extinction coefficient to a tabulated
        constant; absorption/scattering remain formula-driven.
    extinction_override: user extinction (1/m) taking precedence over
        both the preset constant and the formula sum.
    chlorophyll_curve: optional ((nm, m^2/mg), ...) table of specific
        chlorophyll absorption, linearly interpolated.
    alpha_f, alpha_h: spectral exponents (1/nm) of the fulvic and humic
        absorption terms.
    """

    lambda_nm: float = 532.0
    c_c: float = 0.0
    c_e: float = 0.0
    c_o: float = 1.0
    water_preset: str = "custom"
    extinction_override: float | None = None
    chlorophyll_curve: tuple[tuple[float, float], ...] | None = None
    alpha_f: float = ALPHA_FULVIC
    alpha_h: float = ALPHA_HUMIC

    def __post_init__(self):
        require(self.lambda_nm > 0, "lambda_nm must be positive")
        require(0.0 <= self.c_e <= 12.0, "c_e must lie in [0, 12]")
        require(self.c_o > 0, "c_o must be positive")
        require(self.c_c >= 0, "c_c must be nonnegative")
        if self.water_preset != "custom" and self.water_preset not in WATER_PRESETS:
            raise ValueError(
                f"unknown water preset {self.water_preset!r}; expected one of "
                f"{sorted(WATER_PRESETS)} or 'custom'"
            )
        if self.extinction_override is not None:
            require(self.extinction_override >= 0, "extinction_override must be >= 0")


@dataclass(frozen=True)
class OpticalLink:
    """Transceiver hardware parameters of one optical link.

    p_t: transmit power (W); rho_t, rho_r: optical efficiencies in (0, 1];
    theta_0: beam divergence half-angle (rad) in (0, pi/2); b_r: receiver
    aperture area (m^2); theta: trajectory angle between the nodes (rad)
    in [0, pi/2), zero for aligned transceivers.
    """

    p_t: float = 0.1
    rho_t: float = 0.9
    rho_r: float = 0.9
    theta_0: float = math.pi / 6
    b_r: float = 0.01
    theta: float = 0.0

    def __post_init__(self):
        require(self.p_t > 0, "p_t must be positive")
        require(0 < self.rho_t <= 1, "rho_t must lie in (0, 1]")
        require(0 < self.rho_r <= 1, "rho_r must lie in (0, 1]")
        require(0 < self.theta_0 < math.pi / 2, "theta_0 must lie in (0, pi/2)")
        require(1.0 - math.cos(self.theta_0) > 0, "beam divergence must be nonzero")
        require(self.b_r > 0, "b_r must be positive")
        require(0 <= self.theta < math.pi / 2, "theta must lie in [0, pi/2)")


def pure_water_absorption(lambda_nm: float) -> float:
    """Pure sea water absorption (1/m), table lookup with linear interpolation."""
    if not _B_WA_NM[0] <= lambda_nm <= _B_WA_NM[-1]:
        raise ValueError(
            f"wavelength {lambda_nm} nm outside the tabulated pure-water "
            f"absorption range [{_B_WA_NM[0]:.0f}, {_B_WA_NM[-1]:.0f}] nm"
        )
    return float(np.interp(lambda_nm, _B_WA_NM, _B_WA))


def fulvic_concentration(w: WaterModel) -> float:
    """Fulvic acid concentration (mg/l) from the dissolved-matter parameter."""
    return 1.74098 * w.c_e * math.exp(0.12327 * w.c_e / w.c_o)


def humic_concentration(w: WaterModel) -> float:
    """Humic acid concentration (mg/l) from the dissolved-matter parameter."""
    return 0.19334 * w.c_e * math.exp(0.12343 * w.c_e / w.c_o)


def chlorophyll_absorption(w: WaterModel) -> float:
    """Chlorophyll absorption b_ca (1/m); zero unless a curve is supplied."""
    if w.chlorophyll_curve is None or w.c_c == 0.0:
        return 0.0
    table = np.asarray(w.chlorophyll_curve, dtype=float)
    nm, specific = table[:, 0], table[:, 1]
    if not nm[0] <= w.lambda_nm <= nm[-1]:
        raise ValueError(
            f"wavelength {w.lambda_nm} nm outside the supplied chlorophyll "
            f"absorption table [{nm[0]:.0f}, {nm[-1]:.0f}] nm"
        )
    return float(w.c_c * np.interp(w.lambda_nm, nm, specific))


def absorption_coefficient(w: WaterModel) -> float:
    """Total absorption b(lambda) in 1/m.

    Sum of pure-water, chlorophyll, fulvic-acid, and humic-acid terms; the
    acid terms decay exponentially in wavelength with rates alpha_f, alpha_h.
    """
    b_wa = pure_water_absorption(w.lambda_nm)
    b_ca = chlorophyll_absorption(w)
    c_fa = fulvic_concentration(w)
    c_ha = humic_concentration(w)
    return (
        b_wa
        + b_ca
        + B_FULVIC * c_fa * math.exp(-w.alpha_f * w.lambda_nm)
        + B_HUMIC * c_ha * math.exp(-w.alpha_h * w.lambda_nm)
    )


def scattering_coefficient(w: WaterModel) -> float:
    """Total scattering s(lambda) in 1/m.

    Pure-water term plus small- and large-particle terms, each a power law
    in (400 / lambda) weighted by its particle concentration.
    """
    lam = w.lambda_nm
    s_ws = 0.005826 * (400.0 / lam) ** 4.322
    s_ss = 1.151302 * (400.0 / lam) ** 1.7
    s_sl = 0.341074 * (400.0 / lam) ** 0.3
    c_ss = 0.01739 * w.c_e * math.exp(0.11631 * w.c_e / w.c_o)
    c_ls = w.c_e * math.exp(0.03092 * w.c_e / w.c_o)
    return s_ws + s_ss * c_ss + s_sl * c_ls


def extinction_coefficient(w: WaterModel) -> float:
    """Beam extinction e(lambda) in 1/m.

    Custom water: absorption + scattering. Named presets return their
    tabulated constant, and extinction_override beats both.
    """
    if w.extinction_override is not None:
        return float(w.extinction_override)
    if w.water_preset != "custom":
        return WATER_PRESETS[w.water_preset]
    return absorption_coefficient(w) + scattering_coefficient(w)


def geometric_gain(link: OpticalLink) -> float:
    """Distance-independent prefactor of the link budget (W m^2)."""
    cos_t = math.cos(link.theta)
    return (
        link.p_t * link.rho_t * link.rho_r * link.b_r * cos_t
        / (2.0 * math.pi * (1.0 - math.cos(link.theta_0)))
    )


def received_power(link: OpticalLink, e: float, d):
    """Received power (W) at range d (m) for extinction e (1/m).

    Exponential water loss along the slant path combined with spherical
    spreading over the beam solid angle. Strictly decreasing in both d
    and e. Accepts a scalar or an array of distances.
    """
    require(e >= 0, "extinction must be nonnegative")
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("distance must be positive")
    cos_t = math.cos(link.theta)
    out = geometric_gain(link) * np.exp(-e * d_arr / cos_t) / d_arr**2
    return float(out) if np.isscalar(d) or d_arr.ndim == 0 else out


def power_dbw(p_w) -> float:
    """Convert power in watts to dBW."""
    p_arr = np.asarray(p_w, dtype=float)
    if np.any(p_arr <= 0):
        raise ValueError("power must be positive to express in dBW")
    out = 10.0 * np.log10(p_arr)
    return float(out) if np.isscalar(p_w) or p_arr.ndim == 0 else out
