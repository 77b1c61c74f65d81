"""Per-slot network snapshots: link budgets, a circular-orbit generator, CSV I/O.

Node roles are carried by id prefix: ``O...`` observation satellites,
``G...`` ground stations, everything else is a LEO relay.
"""
from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

SPEED_OF_LIGHT_KM_S = 299792.458
BOLTZMANN = 1.380649e-23
EARTH_RADIUS_KM = 6371.0
EARTH_MU_KM3_S2 = 398600.4418
EARTH_ROTATION_RAD_S = 7.2921159e-5

TOPOLOGY_HEADER = ["slot", "src", "dst", "rate_bps"]


class TopologyError(ValueError):
    """Raised for malformed topology input or configuration."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def node_role(node_id: str) -> str:
    """Role of a physical node from its id prefix: 'obs', 'gnd' or 'leo'."""
    if node_id.startswith("O"):
        return "obs"
    if node_id.startswith("G"):
        return "gnd"
    return "leo"


@dataclass(frozen=True)
class GroundStation:
    id: str
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise TopologyError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise TopologyError(f"longitude out of range: {self.longitude}")


# the five stations used in the Iridium experiments
DEFAULT_STATIONS = (
    GroundStation("G_Kiamusze", 43.83, 130.35),
    GroundStation("G_Xiongan", 38.9, 116.0),
    GroundStation("G_Korla", 41.68, 80.06),
    GroundStation("G_Tongchuan", 34.9, 108.93),
    GroundStation("G_Hainan", 19.65, 110.3),
)


@dataclass(frozen=True)
class ConstellationSpec:
    planes: int = 6
    sats_per_plane: int = 11
    altitude: float = 780.0
    inclination: float = 86.4
    n_observation: int = 2
    obs_altitude: float = 500.0
    min_elevation: float = 10.0
    max_os_range: float = 5000.0
    raan_spread: float = 180.0

    def __post_init__(self):
        if self.planes < 1 or self.sats_per_plane < 1:
            raise TopologyError("constellation needs at least one plane and one satellite")
        if self.n_observation < 0:
            raise TopologyError("n_observation must be nonnegative")


@dataclass(frozen=True)
class LinkBudgetParams:
    """Link-budget inputs. Gains and losses in dB, everything else in SI."""
    p_tr: float
    g_tr: float
    g_re: float
    gamma_s: float
    t_sys: float
    ebn0_req: float
    link_margin: float
    f_s: float
    bandwidth: float
    n0: float
    gamma_r: float = 0.0
    k_b: float = BOLTZMANN
    snr_square: bool = True

    def __post_init__(self):
        for name in ("p_tr", "t_sys", "f_s", "bandwidth", "n0", "k_b"):
            if not getattr(self, name) > 0:
                raise TopologyError(f"{name} must be strictly positive")

    @property
    def linear(self) -> dict:
        return {
            "g_tr": db_to_linear(self.g_tr),
            "g_re": db_to_linear(self.g_re),
            "gamma_s": db_to_linear(self.gamma_s),
            "gamma_r": db_to_linear(self.gamma_r),
            "ebn0_req": db_to_linear(self.ebn0_req),
            "link_margin": db_to_linear(self.link_margin),
        }


# Defaults picked so a ~4000 km Ka-band ISL gives ~1 Mbit/s and a ~1500 km
# S-band downlink ~1.7 Mbit/s, i.e. 300/500 Mbits per 300 s slot.
DEFAULT_ISL_PARAMS = LinkBudgetParams(
    p_tr=3.4, g_tr=30.0, g_re=30.0, gamma_s=-2.0, t_sys=500.0,
    ebn0_req=10.0, link_margin=3.0, f_s=23e9, bandwidth=50e6, n0=BOLTZMANN * 500.0,
)
DEFAULT_SG_PARAMS = LinkBudgetParams(
    p_tr=10.0, g_tr=8.0, g_re=5.0, gamma_s=0.0, t_sys=300.0,
    ebn0_req=0.0, link_margin=0.0, f_s=2e9, bandwidth=1e6, n0=BOLTZMANN * 300.0,
    gamma_r=-3.0,
)


@dataclass(frozen=True)
class SlotTopology:
    slot: int
    rate: Mapping[tuple[str, str], float]
    nodes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for (i, j), r in self.rate.items():
            if i == j:
                raise TopologyError(f"self-loop on {i} in slot {self.slot}")
            if not (r > 0 and math.isfinite(r)):
                raise TopologyError(f"rate {r} on ({i},{j}) slot {self.slot} must be finite and positive")


def free_space_loss(distance: float, f_s: float) -> float:
    """Dimensionless path gain (c / (4 pi d f))^2 with d in km and c in km/s."""
    if distance <= 0 or f_s <= 0:
        raise TopologyError("distance and frequency must be positive")
    return (SPEED_OF_LIGHT_KM_S / (4.0 * math.pi * distance * f_s)) ** 2


def isl_rate(params: LinkBudgetParams, distance: float) -> float:
    """Achievable bit rate of an inter-satellite (or OS-LEO) link."""
    if distance <= 0:
        raise TopologyError("distance must be positive")
    lin = params.linear
    num = params.p_tr * lin["g_re"] * lin["g_tr"] * free_space_loss(distance, params.f_s) * lin["gamma_s"]
    den = params.k_b * params.t_sys * lin["ebn0_req"] * lin["link_margin"]
    return num / den


def snr(params: LinkBudgetParams, distance: float) -> float:
    lin = params.linear
    ratio = (params.p_tr * lin["g_tr"] * lin["g_re"] * free_space_loss(distance, params.f_s)
             * lin["gamma_r"]) / (params.n0 * params.bandwidth)
    return ratio ** 2 if params.snr_square else ratio


def shannon_rate(bandwidth: float, snr_value: float) -> float:
    if bandwidth <= 0:
        raise TopologyError("bandwidth must be positive")
    return bandwidth * math.log2(1.0 + snr_value)


def sg_rate(params: LinkBudgetParams, distance: float) -> float:
    """Satellite-to-ground Shannon rate. The SNR bracket is squared unless snr_square is off."""
    if distance <= 0:
        raise TopologyError("distance must be positive")
    return shannon_rate(params.bandwidth, snr(params, distance))


# --- geometry ---------------------------------------------------------------

def _orbit_position(radius, inclination_deg, raan_deg, arg_lat_rad):
    inc = math.radians(inclination_deg)
    raan = math.radians(raan_deg)
    x_p = radius * math.cos(arg_lat_rad)
    y_p = radius * math.sin(arg_lat_rad)
    return (
        x_p * math.cos(raan) - y_p * math.cos(inc) * math.sin(raan),
        x_p * math.sin(raan) + y_p * math.cos(inc) * math.cos(raan),
        y_p * math.sin(inc),
    )


def _station_position(station: GroundStation, t: float):
    lat = math.radians(station.latitude)
    lon = math.radians(station.longitude) + EARTH_ROTATION_RAD_S * t
    return (
        EARTH_RADIUS_KM * math.cos(lat) * math.cos(lon),
        EARTH_RADIUS_KM * math.cos(lat) * math.sin(lon),
        EARTH_RADIUS_KM * math.sin(lat),
    )


def _dist(a, b) -> float:
    return math.dist(a, b)


def elevation_deg(station_pos, sat_pos) -> float:
    d = [s - g for s, g in zip(sat_pos, station_pos)]
    rng = math.hypot(*d)
    up = [g / EARTH_RADIUS_KM for g in station_pos]
    sin_el = sum(di * ui for di, ui in zip(d, up)) / rng
    return math.degrees(math.asin(max(-1.0, min(1.0, sin_el))))


def leo_ids(spec: ConstellationSpec) -> list[str]:
    return [f"S{p}_{s}" for p in range(spec.planes) for s in range(spec.sats_per_plane)]


def _leo_positions(spec: ConstellationSpec, t: float) -> dict[str, tuple]:
    r = EARTH_RADIUS_KM + spec.altitude
    n = math.sqrt(EARTH_MU_KM3_S2 / r ** 3)
    out = {}
    for p in range(spec.planes):
        raan = p * spec.raan_spread / spec.planes
        # Walker-style phasing between neighbouring planes
        offset = math.pi * p / (spec.planes * spec.sats_per_plane)
        for s in range(spec.sats_per_plane):
            u = 2 * math.pi * s / spec.sats_per_plane + offset + n * t
            out[f"S{p}_{s}"] = _orbit_position(r, spec.inclination, raan, u)
    return out


def _isl_pairs(spec: ConstellationSpec) -> list[tuple[str, str]]:
    pairs = set()
    for p in range(spec.planes):
        for s in range(spec.sats_per_plane):
            a = f"S{p}_{s}"
            if spec.sats_per_plane > 1:
                b = f"S{p}_{(s + 1) % spec.sats_per_plane}"
                pairs.add(tuple(sorted((a, b))))
            if p + 1 < spec.planes:
                pairs.add((a, f"S{p + 1}_{s}"))
    return sorted(pairs)


def propagate(spec: ConstellationSpec, stations: Iterable[GroundStation], horizon: int,
              tau: float, seed: int = 0,
              isl_params: LinkBudgetParams = DEFAULT_ISL_PARAMS,
              sg_params: LinkBudgetParams = DEFAULT_SG_PARAMS) -> list[SlotTopology]:
    """Generate K slot snapshots from circular orbits.

    Positions are frozen at the start of each slot. Observation satellites fly
    lower than the relay shell in the plane of a randomly drawn host satellite
    and uplink to the nearest relays in range.
    """
    if horizon < 1 or tau <= 0:
        raise TopologyError("horizon must be >= 1 and tau > 0")
    stations = list(stations)
    leos = leo_ids(spec)
    rng = random.Random(seed)
    hosts = rng.sample(leos, min(spec.n_observation, len(leos)))
    while len(hosts) < spec.n_observation:
        hosts.append(rng.choice(leos))
    obs_ids = [f"O{k}" for k in range(spec.n_observation)]
    universe = frozenset(leos + obs_ids + [g.id for g in stations])
    pairs = _isl_pairs(spec)
    r_obs = EARTH_RADIUS_KM + spec.obs_altitude
    n_obs = math.sqrt(EARTH_MU_KM3_S2 / r_obs ** 3)

    out = []
    for slot in range(1, horizon + 1):
        t = (slot - 1) * tau
        pos = _leo_positions(spec, t)
        rate: dict[tuple[str, str], float] = {}
        for a, b in pairs:
            r = isl_rate(isl_params, _dist(pos[a], pos[b]))
            rate[(a, b)] = r
            rate[(b, a)] = r
        for oid, host in zip(obs_ids, hosts):
            p, s = (int(v) for v in host[1:].split("_"))
            raan = p * spec.raan_spread / spec.planes
            u0 = 2 * math.pi * s / spec.sats_per_plane + math.pi * p / (spec.planes * spec.sats_per_plane)
            opos = _orbit_position(r_obs, spec.inclination, raan, u0 + n_obs * t)
            near = sorted((_dist(opos, pos[l]), l) for l in leos)
            for d, l in near[:2]:
                if d <= spec.max_os_range:
                    rate[(oid, l)] = isl_rate(isl_params, d)
        for g in stations:
            gpos = _station_position(g, t)
            for l in leos:
                if elevation_deg(gpos, pos[l]) >= spec.min_elevation:
                    r = sg_rate(sg_params, _dist(gpos, pos[l]))
                    if r > 0:
                        rate[(l, g.id)] = r
        out.append(SlotTopology(slot, rate, universe))
    return out


# --- CSV --------------------------------------------------------------------

def write_adjacency(slots: Iterable[SlotTopology], path: Path | str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TOPOLOGY_HEADER)
    for st in slots:
        for (i, j) in sorted(st.rate):
            w.writerow([st.slot, i, j, repr(float(st.rate[(i, j)]))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_adjacency(text: str) -> list[SlotTopology]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TopologyError("line 1: missing header") from None
    if [h.strip() for h in header] != TOPOLOGY_HEADER:
        raise TopologyError(f"line 1: expected header {','.join(TOPOLOGY_HEADER)}")
    by_slot: dict[int, dict] = {}
    ids: set[str] = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise TopologyError(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            slot = int(row[0])
            rate = float(row[3])
        except ValueError:
            raise TopologyError(f"line {lineno}: unparsable slot or rate") from None
        src, dst = row[1].strip(), row[2].strip()
        if slot < 1 or not src or not dst or src == dst:
            raise TopologyError(f"line {lineno}: invalid slot or endpoints")
        if not (rate > 0 and math.isfinite(rate)):
            raise TopologyError(f"line {lineno}: rate must be finite and positive")
        links = by_slot.setdefault(slot, {})
        if (src, dst) in links:
            raise TopologyError(f"line {lineno}: duplicate link ({slot},{src},{dst})")
        links[(src, dst)] = rate
        ids.update((src, dst))
    if not by_slot:
        return []
    last = max(by_slot)
    universe = frozenset(ids)
    return [SlotTopology(t, by_slot.get(t, {}), universe) for t in range(1, last + 1)]


def load_adjacency(path: Path | str) -> list[SlotTopology]:
    return parse_adjacency(Path(path).read_text())
