"""Solar position from latitude, longitude, and UTC time.

Implements the NOAA solar-calculator equations (a trimmed Meeus
ephemeris): mean solar anomaly/longitude, equation of center, apparent
longitude, corrected obliquity, declination, and the equation of time,
then the hour-angle to azimuth/elevation conversion.  Stated accuracy is
about 0.1 degrees for years 1950-2100; elevations are geometric (no
refraction correction).

Azimuth is degrees clockwise from north; the world frame is +x east,
+y north, +z up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from relightkit.errors import PreconditionError


@dataclass(frozen=True)
class GeoTime:
    """A place and a moment: degrees latitude/longitude, UTC unix seconds."""

    latitude: float
    longitude: float
    timestamp: float

    def __post_init__(self):
        if not (-90.0 <= self.latitude <= 90.0):
            raise PreconditionError(f"latitude {self.latitude} outside [-90, 90]")
        if not (-180.0 <= self.longitude <= 180.0):
            raise PreconditionError(
                f"longitude {self.longitude} outside [-180, 180]")
        if not math.isfinite(self.timestamp):
            raise PreconditionError("timestamp must be finite")


def solar_angles(geo: GeoTime) -> tuple[float, float]:
    """Solar (azimuth, elevation) in degrees for the given place and time."""
    year = datetime.fromtimestamp(geo.timestamp, tz=timezone.utc).year
    if year < 1950 or year > 2100:
        raise PreconditionError(
            f"timestamp year {year} outside the supported range 1950-2100")

    jd = geo.timestamp / 86400.0 + 2440587.5
    jc = (jd - 2451545.0) / 36525.0

    gmls = (280.46646 + jc * (36000.76983 + jc * 0.0003032)) % 360.0
    gmas = 357.52911 + jc * (35999.05029 - 0.0001537 * jc)
    eeo = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc)
    ctr = (math.sin(math.radians(gmas))
           * (1.914602 - jc * (0.004817 + 0.000014 * jc))
           + math.sin(math.radians(2 * gmas)) * (0.019993 - 0.000101 * jc)
           + math.sin(math.radians(3 * gmas)) * 0.000289)
    true_long = gmls + ctr
    omega = 125.04 - 1934.136 * jc
    app_long = true_long - 0.00569 - 0.00478 * math.sin(math.radians(omega))
    mean_obliq = 23.0 + (26.0 + (21.448 - jc * (46.815 + jc *
                         (0.00059 - jc * 0.001813))) / 60.0) / 60.0
    obliq = mean_obliq + 0.00256 * math.cos(math.radians(omega))
    decl = math.degrees(math.asin(math.sin(math.radians(obliq))
                                  * math.sin(math.radians(app_long))))
    var_y = math.tan(math.radians(obliq / 2.0)) ** 2
    # Equation of time in minutes.
    eq_time = 4.0 * math.degrees(
        var_y * math.sin(2.0 * math.radians(gmls))
        - 2.0 * eeo * math.sin(math.radians(gmas))
        + 4.0 * eeo * var_y * math.sin(math.radians(gmas))
        * math.cos(2.0 * math.radians(gmls))
        - 0.5 * var_y * var_y * math.sin(4.0 * math.radians(gmls))
        - 1.25 * eeo * eeo * math.sin(2.0 * math.radians(gmas)))

    minutes_utc = (geo.timestamp % 86400.0) / 60.0
    true_solar = (minutes_utc + eq_time + 4.0 * geo.longitude) % 1440.0
    ha = true_solar / 4.0 - 180.0

    lat = math.radians(geo.latitude)
    decl_r = math.radians(decl)
    ha_r = math.radians(ha)
    cos_zen = (math.sin(lat) * math.sin(decl_r)
               + math.cos(lat) * math.cos(decl_r) * math.cos(ha_r))
    zenith = math.degrees(math.acos(min(1.0, max(-1.0, cos_zen))))
    elevation = 90.0 - zenith

    sin_zen = math.sin(math.radians(zenith))
    if sin_zen < 1e-9 or abs(math.cos(lat)) < 1e-9:
        azimuth = 0.0                   # sun at zenith or observer at a pole
    else:
        ratio = ((math.sin(lat) * cos_zen - math.sin(decl_r))
                 / (math.cos(lat) * sin_zen))
        base = math.degrees(math.acos(min(1.0, max(-1.0, ratio))))
        if ha > 0:
            azimuth = (base + 180.0) % 360.0
        else:
            azimuth = (540.0 - base) % 360.0
    return azimuth, elevation


def solar_direction(geo: GeoTime) -> np.ndarray:
    """Unit vector toward the sun in the east/north/up world frame."""
    az, el = solar_angles(geo)
    az_r = math.radians(az)
    el_r = math.radians(el)
    return np.array([math.sin(az_r) * math.cos(el_r),
                     math.cos(az_r) * math.cos(el_r),
                     math.sin(el_r)])
