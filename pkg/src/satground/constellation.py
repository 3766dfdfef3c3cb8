"""Circular-orbit propagation and satellite/ground-station contact windows.

Orbits are circular Keplerian; the Earth is a sphere rotating at a constant
rate with Greenwich aligned to the inertial x axis at t = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

R_EARTH_KM = 6371.0
MU_KM3_S2 = 398600.4418
EARTH_ROTATION_RAD_S = 7.2921159e-5

DEFAULT_STEP_S = 10.0
REFINE_TOL_S = 0.1


@dataclass(frozen=True)
class OrbitSpec:
    altitude_km: float
    inclination_deg: float = 0.0
    raan_deg: float = 0.0
    initial_anomaly_deg: float = 0.0
    epoch_s: float = 0.0

    def __post_init__(self):
        if self.altitude_km <= 0:
            raise ValueError("altitude_km must be > 0")
        if not 0.0 <= self.inclination_deg <= 180.0:
            raise ValueError("inclination_deg must be in [0, 180]")

    @property
    def radius_km(self) -> float:
        return R_EARTH_KM + self.altitude_km

    @property
    def mean_motion(self) -> float:
        """Angular rate in rad/s."""
        return math.sqrt(MU_KM3_S2 / self.radius_km ** 3)

    @property
    def period_s(self) -> float:
        return 2.0 * math.pi / self.mean_motion


@dataclass(frozen=True)
class GroundStationSpec:
    latitude_deg: float
    longitude_deg: float
    min_elevation_deg: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise ValueError("latitude_deg must be in [-90, 90]")
        if not -180.0 <= self.longitude_deg <= 180.0:
            raise ValueError("longitude_deg must be in [-180, 180]")
        if not 0.0 <= self.min_elevation_deg < 90.0:
            raise ValueError("min_elevation_deg must be in [0, 90)")

    def with_mask(self, min_elevation_deg):
        return GroundStationSpec(self.latitude_deg, self.longitude_deg, min_elevation_deg)


@dataclass(frozen=True)
class ContactWindow:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError(f"empty contact window [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def propagate(orbit: OrbitSpec, t):
    """ECI position in km at time(s) ``t``; shape (3,) or (3, n)."""
    t = np.asarray(t, dtype=float)
    u = math.radians(orbit.initial_anomaly_deg) + orbit.mean_motion * (t - orbit.epoch_s)
    inc, raan = math.radians(orbit.inclination_deg), math.radians(orbit.raan_deg)
    a = orbit.radius_km
    x_p, y_p = a * np.cos(u), a * np.sin(u)
    ci, si, co, so = math.cos(inc), math.sin(inc), math.cos(raan), math.sin(raan)
    return np.stack([co * x_p - so * ci * y_p,
                     so * x_p + co * ci * y_p,
                     si * y_p])


def ground_station_eci(gs: GroundStationSpec, t):
    t = np.asarray(t, dtype=float)
    lat = math.radians(gs.latitude_deg)
    theta = math.radians(gs.longitude_deg) + EARTH_ROTATION_RAD_S * t
    return R_EARTH_KM * np.stack([math.cos(lat) * np.cos(theta),
                                  math.cos(lat) * np.sin(theta),
                                  np.full_like(theta, math.sin(lat))])


def elevation(sat_position, gs: GroundStationSpec, t):
    """Topocentric elevation in degrees of an ECI position seen from ``gs``."""
    sat = np.asarray(sat_position, dtype=float)
    site = ground_station_eci(gs, t)
    los = sat - site
    up = site / R_EARTH_KM
    sin_el = np.sum(los * up, axis=0) / np.linalg.norm(los, axis=0)
    return np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))


def _margin(orbit, gs, t):
    return elevation(propagate(orbit, t), gs, t) - gs.min_elevation_deg


def _refine(orbit, gs, lo, hi, rising):
    # invariant: visible at hi when rising, at lo when setting
    while hi - lo > REFINE_TOL_S:
        mid = 0.5 * (lo + hi)
        if (_margin(orbit, gs, mid) >= 0) == rising:
            hi = mid
        else:
            lo = mid
    return hi if rising else lo


def contact_windows(orbit: OrbitSpec, gs: GroundStationSpec, horizon_s: float,
                    step_s: float = DEFAULT_STEP_S) -> List[ContactWindow]:
    """Visibility intervals within ``[epoch, epoch + horizon_s]``.

    A fixed-step scan locates elevation-mask crossings, which are then refined
    by bisection to 0.1 s.
    """
    if step_s <= 0 or horizon_s <= 0:
        raise ValueError("step_s and horizon_s must be > 0")
    t0 = orbit.epoch_s
    t_end = t0 + horizon_s
    times = np.arange(t0, t_end, step_s)
    if times[-1] < t_end:
        times = np.append(times, t_end)
    visible = _margin(orbit, gs, times) >= 0

    windows = []
    start = t0 if visible[0] else None
    for k in range(1, len(times)):
        if visible[k] and not visible[k - 1]:
            start = _refine(orbit, gs, times[k - 1], times[k], rising=True)
        elif visible[k - 1] and not visible[k]:
            end = _refine(orbit, gs, times[k - 1], times[k], rising=False)
            if end > start:
                windows.append(ContactWindow(float(start), float(end)))
            start = None
    if start is not None and t_end > start:
        windows.append(ContactWindow(float(start), float(t_end)))
    return windows


def contact_fraction(windows: Sequence[ContactWindow], horizon_s: float) -> float:
    return sum(w.duration_s for w in windows) / horizon_s


def coverage_half_angle(altitude_km: float, min_elevation_deg: float) -> float:
    """Earth central angle (rad) from the sub-satellite point to the mask edge."""
    eps = math.radians(min_elevation_deg)
    a = R_EARTH_KM + altitude_km
    return math.acos(R_EARTH_KM * math.cos(eps) / a) - eps


def relative_track_rate(orbit: OrbitSpec, latitude_deg: float) -> float:
    """Angular speed (rad/s) of the sub-satellite point relative to the rotating Earth."""
    w, we = orbit.mean_motion, EARTH_ROTATION_RAD_S
    inc, lat = math.radians(orbit.inclination_deg), math.radians(latitude_deg)
    return math.sqrt(w * w - 2 * w * we * math.cos(inc) + (we * math.cos(lat)) ** 2)


def max_pass_duration(orbit: OrbitSpec, gs: GroundStationSpec) -> float:
    """Closed-form duration of a directly overhead pass."""
    return 2.0 * coverage_half_angle(orbit.altitude_km, gs.min_elevation_deg) / \
        relative_track_rate(orbit, gs.latitude_deg)


def overhead_orbit(gs: GroundStationSpec, altitude_km: float, inclination_deg: float,
                   t_overhead: float, ascending: bool = True) -> OrbitSpec:
    """An orbit whose sub-satellite point crosses ``gs`` at ``t_overhead``."""
    lat = math.radians(gs.latitude_deg)
    inc = math.radians(inclination_deg)
    if abs(math.sin(lat)) > math.sin(inc) + 1e-12:
        raise ValueError("ground station latitude unreachable at this inclination")
    if math.sin(inc) < 1e-12:
        u = 0.0  # equatorial: the node is arbitrary, put it under the station
    else:
        u = math.asin(max(-1.0, min(1.0, math.sin(lat) / math.sin(inc))))
    if not ascending:
        u = math.pi - u
    # right ascension of the station at t_overhead, minus the in-plane offset
    alpha = math.radians(gs.longitude_deg) + EARTH_ROTATION_RAD_S * t_overhead
    node_offset = math.atan2(math.cos(inc) * math.sin(u), math.cos(u))
    raan = alpha - node_offset
    anomaly0 = u - math.sqrt(MU_KM3_S2 / (R_EARTH_KM + altitude_km) ** 3) * t_overhead
    return OrbitSpec(altitude_km, inclination_deg, math.degrees(raan) % 360.0,
                     math.degrees(anomaly0) % 360.0)


def mean_contact_fraction(orbits: Sequence[OrbitSpec], gs: GroundStationSpec,
                          horizon_s: float, step_s: float = DEFAULT_STEP_S) -> float:
    fractions = [contact_fraction(contact_windows(o, gs, horizon_s, step_s), horizon_s)
                 for o in orbits]
    return float(np.mean(fractions))


class CalibrationError(ValueError):
    def __init__(self, target, achievable):
        self.target = target
        self.achievable = achievable
        super().__init__(f"contact fraction {target} unreachable; achievable range "
                         f"[{achievable[0]:.6f}, {achievable[1]:.6f}] for masks in [0, 89] deg")


def calibrate_mask(orbits: Sequence[OrbitSpec], gs: GroundStationSpec, horizon_s: float,
                   target: float = 0.0433, tol: float = 0.0005,
                   step_s: float = DEFAULT_STEP_S, lo: float = 0.0, hi: float = 89.0):
    """Bisect the elevation mask so the mean contact fraction hits ``target``.

    Returns ``(mask_deg, achieved_fraction)``. Raises :class:`CalibrationError`
    when the target lies outside what masks in ``[lo, hi]`` can produce.
    """
    def frac(mask):
        return mean_contact_fraction(orbits, gs.with_mask(mask), horizon_s, step_s)

    f_lo, f_hi = frac(lo), frac(hi)
    if abs(f_hi - target) <= tol:
        return hi, f_hi
    if abs(f_lo - target) <= tol:
        return lo, f_lo
    if not f_hi <= target <= f_lo:
        raise CalibrationError(target, (f_hi, f_lo))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f_mid = frac(mid)
        if abs(f_mid - target) <= tol:
            return mid, f_mid
        if f_mid > target:
            lo = mid
        else:
            hi = mid
    return mid, f_mid
