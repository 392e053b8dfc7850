"""Circular two-body propagation, ground-station geometry and contact plans.

Positions are expressed in an Earth-centred inertial frame whose x axis is
aligned with the Greenwich meridian at t = 0.  The Earth is a sphere of
radius ``EARTH_RADIUS_M`` rotating at a constant rate about the z axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
MU_EARTH = 3.986004418e14  # m^3 / s^2
EARTH_ROTATION_RATE = 7.2921159e-5  # rad / s

DEFAULT_T0_SECONDS = 900.0
DEFAULT_HORIZON = 480
DEFAULT_SUBSTEP_SECONDS = 60.0


class TraceFormatError(ValueError):
    """Raised when a contact trace file violates the CSV contract."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class OrbitalElements:
    """Circular orbit; eccentricity is zero by construction."""

    semi_major_axis_m: float
    inclination_rad: float
    raan_rad: float
    phase_rad: float

    def __post_init__(self) -> None:
        values = (self.semi_major_axis_m, self.inclination_rad, self.raan_rad, self.phase_rad)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("orbital elements must be finite")
        if self.semi_major_axis_m <= EARTH_RADIUS_M:
            raise ValueError(
                f"semi-major axis {self.semi_major_axis_m} m is inside the Earth"
            )

    @property
    def mean_motion(self) -> float:
        return math.sqrt(MU_EARTH / self.semi_major_axis_m**3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion


@dataclass(frozen=True)
class GroundStation:
    latitude_rad: float
    longitude_rad: float
    altitude_m: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        if not -math.pi / 2 <= self.latitude_rad <= math.pi / 2:
            raise ValueError(f"latitude {self.latitude_rad} outside [-pi/2, pi/2]")
        if not -math.pi <= self.longitude_rad < math.pi:
            raise ValueError(f"longitude {self.longitude_rad} outside [-pi, pi)")
        if not (math.isfinite(self.altitude_m) and self.altitude_m >= 0):
            raise ValueError("altitude must be a finite non-negative number")

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float, altitude_m: float = 0.0, name: str = "") -> "GroundStation":
        lon = (lon_deg + 180.0) % 360.0 - 180.0
        return cls(math.radians(lat_deg), math.radians(lon), altitude_m, name)


@dataclass(frozen=True)
class EciPosition:
    x: float
    y: float
    z: float
    t: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("position components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class ConnectivitySets:
    """Time-indexed satellite membership ``sets[i]`` for intervals of ``t0_seconds``."""

    sets: tuple[tuple[int, ...], ...]
    num_satellites: int
    t0_seconds: float = DEFAULT_T0_SECONDS

    def __post_init__(self) -> None:
        if self.num_satellites < 0:
            raise ValueError("num_satellites must be non-negative")
        if not (math.isfinite(self.t0_seconds) and self.t0_seconds > 0):
            raise ValueError("t0_seconds must be positive")
        for i, members in enumerate(self.sets):
            prev = -1
            for k in members:
                if not 0 <= k < self.num_satellites:
                    raise ValueError(f"satellite id {k} at index {i} out of range")
                if k <= prev:
                    raise ValueError(f"set at index {i} is not strictly sorted")
                prev = k

    @classmethod
    def from_lists(cls, sets: Sequence[Sequence[int]], num_satellites: int, t0_seconds: float = DEFAULT_T0_SECONDS) -> "ConnectivitySets":
        return cls(tuple(tuple(sorted(int(k) for k in s)) for s in sets), num_satellites, t0_seconds)

    @property
    def horizon(self) -> int:
        return len(self.sets)

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return self.sets[i]

    def __len__(self) -> int:
        return len(self.sets)

    def window(self, start: int, length: int) -> tuple[tuple[int, ...], ...]:
        """Sets for ``[start, start + length)``, padded with empty sets past the horizon."""
        out = list(self.sets[start:start + length])
        out.extend(() for _ in range(length - len(out)))
        return tuple(out)


# --- propagation -----------------------------------------------------------


def _orbit_positions(elements: Sequence[OrbitalElements], times: np.ndarray) -> np.ndarray:
    """ECI positions with shape ``(len(elements),) + times.shape + (3,)``."""
    a = np.array([e.semi_major_axis_m for e in elements])
    n = np.sqrt(MU_EARTH / a**3)
    inc = np.array([e.inclination_rad for e in elements])
    raan = np.array([e.raan_rad for e in elements])
    phase = np.array([e.phase_rad for e in elements])

    extra = (1,) * times.ndim
    u = phase.reshape(-1, *extra) + n.reshape(-1, *extra) * times[None]
    cu, su = np.cos(u), np.sin(u)
    ci, si = np.cos(inc).reshape(-1, *extra), np.sin(inc).reshape(-1, *extra)
    co, so = np.cos(raan).reshape(-1, *extra), np.sin(raan).reshape(-1, *extra)
    r = a.reshape(-1, *extra)
    # in-plane (cu, su, 0), rotated by inclination about x then RAAN about z
    x = r * (co * cu - so * ci * su)
    y = r * (so * cu + co * ci * su)
    z = r * (si * su)
    return np.stack([x, y, z], axis=-1)


def _station_positions(stations: Sequence[GroundStation], times: np.ndarray) -> np.ndarray:
    lat = np.array([g.latitude_rad for g in stations])
    lon = np.array([g.longitude_rad for g in stations])
    r = EARTH_RADIUS_M + np.array([g.altitude_m for g in stations])
    extra = (1,) * times.ndim
    theta = lon.reshape(-1, *extra) + EARTH_ROTATION_RATE * times[None]
    clat = np.cos(lat).reshape(-1, *extra)
    slat = np.sin(lat).reshape(-1, *extra)
    r = r.reshape(-1, *extra)
    x = r * clat * np.cos(theta)
    y = r * clat * np.sin(theta)
    z = np.broadcast_to(r * slat, x.shape)
    return np.stack([x, y, z], axis=-1)


def propagate_satellite(elements: OrbitalElements, t: float) -> EciPosition:
    if t < 0:
        raise ValueError("t must be non-negative")
    pos = _orbit_positions([elements], np.asarray(float(t)))[0]
    return EciPosition(float(pos[0]), float(pos[1]), float(pos[2]), float(t))


def ground_station_position(gs: GroundStation, t: float) -> EciPosition:
    pos = _station_positions([gs], np.asarray(float(t)))[0]
    return EciPosition(float(pos[0]), float(pos[1]), float(pos[2]), float(t))


# --- visibility ------------------------------------------------------------


def off_zenith_angle(sat: np.ndarray, gs: np.ndarray) -> np.ndarray:
    """Angle between the station's radial direction and its line of sight to the satellite.

    Broadcasts over leading dimensions; the last axis holds xyz.
    """
    los = sat - gs
    dot = np.sum(gs * los, axis=-1)
    norm = np.linalg.norm(gs, axis=-1) * np.linalg.norm(los, axis=-1)
    return np.arccos(np.clip(dot / norm, -1.0, 1.0))


def elevation_feasible(sat: EciPosition, gs: EciPosition, alpha_min_rad: float) -> bool:
    rg = gs.as_array()
    rk = sat.as_array()
    if not np.any(rg):
        raise ValueError("ground station position has zero length")
    if np.array_equal(rg, rk):
        raise ValueError("satellite and ground station coincide")
    angle = float(off_zenith_angle(rk, rg))
    return angle <= math.pi / 2 - alpha_min_rad


def sample_offsets(t0_seconds: float, substep_seconds: float) -> np.ndarray:
    if not 0 < substep_seconds <= t0_seconds:
        raise ValueError("substep_seconds must satisfy 0 < substep <= t0")
    count = math.ceil(t0_seconds / substep_seconds - 1e-9)
    return np.arange(count) * substep_seconds


def compute_connectivity(
    constellation: Sequence[OrbitalElements],
    stations: Sequence[GroundStation],
    alpha_min_rad: float,
    t0_seconds: float = DEFAULT_T0_SECONDS,
    horizon: int = DEFAULT_HORIZON,
    substep_seconds: float = DEFAULT_SUBSTEP_SECONDS,
    min_coverage: float = 1.0,
) -> ConnectivitySets:
    """Connectivity sets from sampled elevation feasibility.

    Satellite ``k`` belongs to ``C_i`` when a single station sees it above
    ``alpha_min_rad`` at no fewer than ``min_coverage`` of the sampled
    instants of ``[i*t0, (i+1)*t0)``.  ``min_coverage=1`` demands visibility
    at every sample.
    """
    if not constellation:
        raise ValueError("constellation is empty")
    if not stations:
        raise ValueError("station list is empty")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not 0 < min_coverage <= 1:
        raise ValueError("min_coverage must be in (0, 1]")

    offsets = sample_offsets(t0_seconds, substep_seconds)
    times = np.arange(horizon)[:, None] * t0_seconds + offsets[None, :]
    needed = max(1, math.ceil(min_coverage * len(offsets) - 1e-9))
    limit = math.pi / 2 - alpha_min_rad

    sat = _orbit_positions(constellation, times)  # (K, H, S, 3)
    connected = np.zeros((len(constellation), horizon), dtype=bool)
    for g in stations:
        gpos = _station_positions([g], times)[0]  # (H, S, 3)
        feasible = off_zenith_angle(sat, gpos[None]) <= limit
        connected |= feasible.sum(axis=-1) >= needed

    sets = tuple(tuple(int(k) for k in np.flatnonzero(connected[:, i])) for i in range(horizon))
    return ConnectivitySets(sets, len(constellation), float(t0_seconds))


def connectivity_stats(sets: ConnectivitySets) -> tuple[np.ndarray, np.ndarray]:
    """Per-index counts ``|C_i|`` and per-satellite visit counts ``n_k``."""
    counts = np.array([len(s) for s in sets.sets], dtype=int)
    visits = np.zeros(sets.num_satellites, dtype=int)
    for s in sets.sets:
        for k in s:
            visits[k] += 1
    return counts, visits


# --- ground tracks and zones -----------------------------------------------


@dataclass(frozen=True)
class Zone:
    """Latitude/longitude box on the rotating Earth (radians)."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float


def ground_track(elements: Sequence[OrbitalElements], times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sub-satellite latitude and Earth-fixed longitude, each shaped ``(K, len(times))``."""
    pos = _orbit_positions(elements, np.asarray(times, dtype=float))
    lat = np.arcsin(pos[..., 2] / np.linalg.norm(pos, axis=-1))
    lon = np.arctan2(pos[..., 1], pos[..., 0]) - EARTH_ROTATION_RATE * np.asarray(times)[None]
    lon = (lon + np.pi) % (2 * np.pi) - np.pi
    return lat, lon


def zone_visit_table(
    constellation: Sequence[OrbitalElements],
    zones: Sequence[Zone],
    duration_seconds: float,
    step_seconds: float = 30.0,
) -> np.ndarray:
    """Number of distinct passes of each satellite over each zone, shape ``(Z, K)``."""
    times = np.arange(0.0, duration_seconds, step_seconds)
    lat, lon = ground_track(constellation, times)
    table = np.zeros((len(zones), len(constellation)), dtype=int)
    for z, zone in enumerate(zones):
        inside = (lat >= zone.lat_min) & (lat < zone.lat_max) & (lon >= zone.lon_min) & (lon < zone.lon_max)
        entries = inside[:, 0].astype(int) + np.sum(inside[:, 1:] & ~inside[:, :-1], axis=1)
        table[z] = entries
    return table


def grid_zones(count: int, half_width_deg: float = 4.0, lat_limit_deg: float = 60.0) -> list[Zone]:
    """``count`` square zones spread over latitude bands and longitude sectors."""
    if count < 1:
        raise ValueError("count must be >= 1")
    zones = []
    golden = (math.sqrt(5) - 1) / 2
    for z in range(count):
        lat = -lat_limit_deg + 2 * lat_limit_deg * (z + 0.5) / count
        lon = ((z * golden) % 1.0) * 360.0 - 180.0
        hw = half_width_deg
        zones.append(
            Zone(
                math.radians(lat - hw),
                math.radians(lat + hw),
                math.radians(max(lon - hw, -180.0)),
                math.radians(min(lon + hw, 180.0)),
            )
        )
    return zones


# --- reference configuration -------------------------------------------------

_REFERENCE_STATIONS_DEG = [
    ("svalbard", 78.23, 15.39),
    ("inuvik", 68.36, -133.72),
    ("fairbanks", 64.86, -147.85),
    ("kiruna", 67.86, 20.96),
    ("awarua", -46.53, 168.38),
    ("punta-arenas", -53.16, -70.91),
    ("troll", -72.01, 2.53),
    ("hartebeesthoek", -25.89, 27.69),
    ("dubai", 25.20, 55.27),
    ("hawaii", 19.82, -155.47),
    ("singapore", 1.35, 103.82),
    ("wallops", 37.94, -75.46),
]


def reference_stations() -> list[GroundStation]:
    return [GroundStation.from_degrees(lat, lon, 0.0, name) for name, lat, lon in _REFERENCE_STATIONS_DEG]


def walker_constellation(
    planes: int,
    per_plane: int,
    altitude_m: float = 500_000.0,
    inclination_rad: float = math.radians(97.4),
    phasing: int = 1,
    raan_spread_rad: float = 2 * math.pi,
) -> list[OrbitalElements]:
    """Walker-style constellation: planes evenly spread in RAAN, satellites evenly phased."""
    if planes < 1 or per_plane < 1:
        raise ValueError("planes and per_plane must be >= 1")
    total = planes * per_plane
    a = EARTH_RADIUS_M + altitude_m
    out = []
    for p in range(planes):
        raan = raan_spread_rad * p / planes
        for j in range(per_plane):
            phase = 2 * math.pi * j / per_plane + 2 * math.pi * phasing * p / total
            out.append(OrbitalElements(a, inclination_rad, raan % (2 * math.pi), phase % (2 * math.pi)))
    return out


# --- contact trace files -----------------------------------------------------


def _format_t0(t0: float) -> str:
    return str(int(t0)) if float(t0).is_integer() else repr(float(t0))


def save_contact_trace(sets: ConnectivitySets, path: str | Path) -> None:
    lines = [
        f"# horizon={sets.horizon} satellites={sets.num_satellites} t0_seconds={_format_t0(sets.t0_seconds)}",
        "time_index,satellite_id",
    ]
    for i, members in enumerate(sets.sets):
        lines.extend(f"{i},{k}" for k in members)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _parse_header(line: str) -> tuple[int, int, float]:
    if not line.startswith("#"):
        raise TraceFormatError(1, "missing '# horizon=... satellites=... t0_seconds=...' comment")
    fields = {}
    for token in line[1:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise TraceFormatError(1, f"malformed header token {token!r}")
        fields[key] = value
    try:
        horizon = int(fields["horizon"])
        satellites = int(fields["satellites"])
        t0 = float(fields["t0_seconds"])
    except (KeyError, ValueError) as exc:
        raise TraceFormatError(1, f"bad header: {exc}") from None
    if horizon < 0 or satellites < 0 or not t0 > 0:
        raise TraceFormatError(1, "header values out of range")
    return horizon, satellites, t0


def load_contact_trace(path: str | Path) -> ConnectivitySets:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceFormatError(1, "empty file")
    horizon, satellites, t0 = _parse_header(lines[0])
    if len(lines) < 2 or lines[1].strip() != "time_index,satellite_id":
        raise TraceFormatError(2, "expected column header 'time_index,satellite_id'")

    members: list[list[int]] = [[] for _ in range(horizon)]
    prev: tuple[int, int] | None = None
    for lineno, raw in enumerate(lines[2:], start=3):
        parts = raw.strip().split(",")
        if len(parts) != 2:
            raise TraceFormatError(lineno, f"expected 2 columns, got {raw!r}")
        try:
            i, k = int(parts[0]), int(parts[1])
        except ValueError:
            raise TraceFormatError(lineno, f"non-integer value in {raw!r}") from None
        if not 0 <= i < horizon:
            raise TraceFormatError(lineno, f"time_index {i} outside horizon {horizon}")
        if not 0 <= k < satellites:
            raise TraceFormatError(lineno, f"satellite_id {k} outside [0, {satellites})")
        if prev is not None:
            if (i, k) == prev:
                raise TraceFormatError(lineno, f"duplicate row ({i},{k})")
            if (i, k) < prev:
                raise TraceFormatError(lineno, f"row ({i},{k}) is not sorted after {prev}")
        prev = (i, k)
        members[i].append(k)
    return ConnectivitySets(tuple(tuple(m) for m in members), satellites, t0)
