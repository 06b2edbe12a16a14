"""Seeded Monte-Carlo sweeps over scheme x speed x distance.

All randomness comes from splitmix64 seeds derived from the master seed,
the replicate, the phase (calibration or measurement) and the packet index.
Scheme, speed and distance are deliberately left out of the channel seed,
so every grid point sees the same payloads, jitter deviates and noise
samples.  Differences between points are then caused by the parameters
alone and not by sampling noise.

Everything after the laser is linear, so each packet's noiseless received
spectrum is computed once per waveform and reused at every grid point as
``gain * signal + noise``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .channel import (
    LaserModel,
    LinkResponse,
    MobilityProfile,
    Trajectory,
    realize,
    receiver_noise,
    signal_path,
)
from .loading import (
    DEFAULT_GAP_DB,
    LoadingTable,
    calibrate,
    uniform_loading,
)
from .modem import (
    OfdmConfig,
    Precoder,
    build_packet,
    compute_ber,
    demap_payload,
    demodulate_frame,
    equalize,
    estimate_channel,
    training_symbols,
)
from .oct import build_oct, decode

log = logging.getLogger(__name__)

SCHEMES = ("OFDM", "DMT", "OCT")
PRECODER = {"OFDM": Precoder.NONE, "DMT": Precoder.NONE, "OCT": Precoder.OCT}

RESULTS_HEADER = [
    "scheme", "speed_cm_s", "distance_cm", "replicate",
    "packet_loss_rate", "mean_ber", "ber_p10", "ber_p90",
]
PACKETS_HEADER = [
    "scheme", "speed_cm_s", "distance_cm", "replicate",
    "packet_index", "offset_cm", "ber", "lost",
]
LOADING_HEADER = ["scheme", "speed_cm_s", "distance_cm", "replicate", "subcarrier", "bits", "power"]
DIST_HEADER = [
    "scheme", "speed_cm_s", "distance_cm", "n_packets",
    "mean_ber", "ber_p10", "ber_p25", "ber_median", "ber_p75", "ber_p90",
]

# Harness calibration of the two free link parameters.  noise_std puts the
# 4QAM-OFDM loss threshold just inside the beam edge of the 50 cm traverse,
# so a stationary receiver never loses packets; jitter_coeff sets how fast
# loss grows with speed.
CALIBRATED_NOISE_STD = 0.145
CALIBRATED_JITTER_COEFF = 0.02

PHASE_MEASURE = 1
PHASE_CALIBRATE = 2
PHASE_STATIONARY = 3


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Seeds
# --------------------------------------------------------------------------

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, *keys) -> int:
    h = splitmix64(master & _MASK)
    for k in keys:
        if isinstance(k, str):
            k = zlib.crc32(k.encode())
        h = splitmix64(h ^ (int(k) & _MASK))
    return h


# --------------------------------------------------------------------------
# Config
# --------------------------------------------------------------------------


def _default_mobility() -> MobilityProfile:
    return MobilityProfile(jitter_coeff=CALIBRATED_JITTER_COEFF)


def _default_link() -> LinkResponse:
    return LinkResponse(noise_std=CALIBRATED_NOISE_STD)


@dataclass(frozen=True)
class SweepConfig:
    schemes: Tuple[str, ...] = SCHEMES
    speeds_cm_s: Tuple[float, ...] = (0, 10, 20, 30, 40, 50)
    distances_cm: Tuple[float, ...] = (30, 40, 50)
    packets_per_point: int = 500
    calibration_packets: int = 20
    fec_ber_limit: float = 3.8e-3
    master_seed: int = 2016
    replicate_count: int = 1
    recalibrate_per_speed: bool = True
    gap_db: float = DEFAULT_GAP_DB
    oct_generator: str = "zc"
    amplification_db_sweep: Tuple[float, ...] = tuple(np.arange(10.0, 40.01, 2.5).tolist())
    bias_v_sweep: Tuple[float, ...] = (4.5, 5.0, 5.5, 6.0, 6.5, 7.0, 7.5)
    stationary_packets: int = 20
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    laser: LaserModel = field(default_factory=LaserModel)
    mobility: MobilityProfile = field(default_factory=_default_mobility)
    link: LinkResponse = field(default_factory=_default_link)

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(s.upper() for s in self.schemes))
        for name in ("speeds_cm_s", "distances_cm", "amplification_db_sweep", "bias_v_sweep"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise ConfigError(f"schemes must be a nonempty subset of {SCHEMES}, got {self.schemes}")
        if self.packets_per_point < 1:
            raise ConfigError("packets_per_point must be >= 1")
        if self.calibration_packets < 1:
            raise ConfigError("calibration_packets must be >= 1")
        if not 0 < self.fec_ber_limit <= 0.5:
            raise ConfigError("fec_ber_limit must lie in (0, 0.5]")
        if any(v < 0 for v in self.speeds_cm_s + self.distances_cm):
            raise ConfigError("speeds and distances must be nonnegative")
        if self.replicate_count < 1:
            raise ConfigError("replicate_count must be >= 1")
        if self.ofdm.n_training_symbols < 2:
            raise ConfigError("need at least 2 training symbols")

    @property
    def target_bits(self) -> int:
        return 2 * self.ofdm.n_data_subcarriers

    @property
    def gap(self) -> float:
        return 10 ** (self.gap_db / 10)

    @property
    def training_seed(self) -> int:
        return derive_seed(self.master_seed, "training") & 0xFFFFFFFF

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                sub = dataclasses.asdict(v)
                for k, x in sub.items():
                    if isinstance(x, Fraction):
                        sub[k] = str(x)
                    elif isinstance(x, Trajectory):
                        sub[k] = x.value
                d[f.name] = sub
            elif isinstance(v, tuple):
                d[f.name] = list(v)
            else:
                d[f.name] = v
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name: f for f in dataclasses.fields(cls)}
        nested = {"ofdm": OfdmConfig, "laser": LaserModel, "mobility": MobilityProfile, "link": LinkResponse}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown config field {key!r}")
            if key in nested:
                base = getattr(cls(), key)
                sub_known = {f.name for f in dataclasses.fields(nested[key])}
                unknown = set(value) - sub_known
                if unknown:
                    raise ConfigError(f"unknown {key} fields: {sorted(unknown)}")
                if key == "ofdm" and "cp_ratio" in value:
                    value = dict(value, cp_ratio=Fraction(value["cp_ratio"]))
                try:
                    kwargs[key] = dataclasses.replace(base, **value)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{key}: {exc}") from exc
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "SweepConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
        return cls.from_dict(data)

    def with_overrides(self, overrides: Dict[str, object]) -> "SweepConfig":
        """Apply dotted-key overrides such as ``{"link.noise_std": 0.1}``."""
        data = self.to_dict()
        for key, value in overrides.items():
            parts = key.split(".")
            node = data
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config field {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config field {key!r}")
            node[parts[-1]] = value
        return SweepConfig.from_dict(data)


# --------------------------------------------------------------------------
# Results
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PacketRecord:
    packet_index: int
    scheme: str
    speed: float
    distance: float
    offset_cm: float
    ber: float
    lost: bool


@dataclass
class TrialResult:
    scheme: str
    speed: float
    distance: float
    replicate: int
    fec_ber_limit: float
    records: List[PacketRecord]
    loading: Optional[LoadingTable] = None

    @property
    def bers(self) -> np.ndarray:
        return np.array([r.ber for r in self.records])

    @property
    def packet_loss_rate(self) -> float:
        return sum(r.lost for r in self.records) / len(self.records)

    @property
    def mean_ber(self) -> float:
        return float(self.bers.mean())

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.bers, q))

    @property
    def key(self):
        return (SCHEMES.index(self.scheme), self.speed, self.distance, self.replicate)


def is_lost(ber: float, limit: float) -> bool:
    return ber > limit


# --------------------------------------------------------------------------
# Simulation engine
# --------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


class _Link:
    """Receiver-side helpers bound to one configuration."""

    def __init__(self, cfg: SweepConfig):
        self.cfg = cfg
        o = cfg.ofdm
        self.ref = training_symbols(o, cfg.training_seed)
        self.oct = build_oct(o.n_data_subcarriers, cfg.oct_generator)
        self.uniform = uniform_loading(o.n_data_subcarriers)

    def payload(self, replicate: int, phase: int, index: int) -> np.ndarray:
        seed = derive_seed(self.cfg.master_seed, replicate, phase, index, "payload")
        n = self.cfg.target_bits * self.cfg.ofdm.n_data_symbols
        return np.random.default_rng(seed).integers(0, 2, n, dtype=np.uint8)

    def channel_seed(self, replicate: int, phase: int, index: int) -> int:
        return derive_seed(self.cfg.master_seed, replicate, phase, index)

    def packet(self, bits, loading: LoadingTable, scheme: str):
        return build_packet(bits, loading, PRECODER[scheme], self.cfg.ofdm, self.cfg.training_seed, self.oct)

    def clean_spectra(self, waveform, laser: Optional[LaserModel] = None) -> np.ndarray:
        c = self.cfg
        s = signal_path(waveform, laser or c.laser, c.link, c.ofdm)
        return demodulate_frame(s, c.ofdm)[:, c.ofdm.data_bins]

    def noise_spectra(self, seed: int) -> np.ndarray:
        c = self.cfg
        n = receiver_noise(seed, c.ofdm.packet_len, c.link, c.ofdm)
        return demodulate_frame(n, c.ofdm)[:, c.ofdm.data_bins]

    def receive(self, spectra: np.ndarray, loading: LoadingTable, scheme: str):
        """Demodulated data-bin spectra -> hard bits, or None when a loaded bin has H = 0."""
        nt = self.cfg.ofdm.n_training_symbols
        est = estimate_channel(spectra[:nt], self.ref, self.cfg.ofdm)
        eq = equalize(spectra[nt:], est)
        loaded = loading.bits > 0
        if np.any(np.isnan(eq[:, loaded])):
            return None
        eq = eq / np.sqrt(np.where(loaded, loading.power, 1.0))
        if PRECODER[scheme] is Precoder.OCT:
            eq = decode(eq, self.oct)
        return demap_payload(eq, loading.bits)

    def packet_ber(self, bits, spectra, loading, scheme) -> float:
        rx = self.receive(spectra, loading, scheme)
        return 0.5 if rx is None else compute_ber(bits, rx)


def simulate(
    cfg: SweepConfig,
    points: Sequence[Tuple[str, float, float]],
    replicate: int = 0,
) -> List[TrialResult]:
    """Run a set of (scheme, speed, distance) points for one replicate.

    Two phases: loading tables first (DMT probes the channel with
    calibration-phase seeds; OFDM and OCT are fixed before any realization
    exists), then the measurement packets.
    """
    link = _Link(cfg)
    o = cfg.ofdm
    points = [(s.upper(), float(v), float(d)) for s, v, d in points]

    # ---- phase 1: loading tables
    probe_cache: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    def probe_runner_for(speed: float, distance: float):
        prof = cfg.mobility.at(speed, distance)

        def run(packet, j):
            if j not in probe_cache:
                clean = signal_path(packet.waveform, cfg.laser, cfg.link, o)
                seed = link.channel_seed(replicate, PHASE_CALIBRATE, j)
                probe_cache[j] = (clean, receiver_noise(seed, o.packet_len, cfg.link, o))
            clean, noise = probe_cache[j]
            r = realize(prof, j, cfg.calibration_packets, link.channel_seed(replicate, PHASE_CALIBRATE, j))
            return r.gain * clean + noise

        return run

    calib_speed = min(cfg.speeds_cm_s) if cfg.speeds_cm_s else 0.0
    probes = [link.payload(replicate, PHASE_CALIBRATE, j) for j in range(cfg.calibration_packets)]
    tables: Dict[Tuple[str, float, float], LoadingTable] = {}
    dmt_cache: Dict[Tuple[float, float], LoadingTable] = {}
    for scheme, v, d in points:
        if scheme != "DMT":
            tables[(scheme, v, d)] = calibrate(scheme, None, o)
            continue
        cal_v = v if cfg.recalibrate_per_speed else calib_speed
        if (cal_v, d) not in dmt_cache:
            dmt_cache[(cal_v, d)] = calibrate(
                "DMT", probe_runner_for(cal_v, d), o,
                probe_payloads=probes, n_probes=cfg.calibration_packets,
                training_seed=cfg.training_seed, target_bits=cfg.target_bits, gap=cfg.gap,
            )
        tables[(scheme, v, d)] = dmt_cache[(cal_v, d)]

    # ---- phase 2: measurement
    n = cfg.packets_per_point
    records: Dict[Tuple[str, float, float], List[PacketRecord]] = {p: [] for p in points}
    waveform_keys = list(dict.fromkeys((s, tables[(s, v, d)]) for s, v, d in points))
    profiles = {(v, d): cfg.mobility.at(v, d) for _, v, d in points}
    for i in range(n):
        bits = link.payload(replicate, PHASE_MEASURE, i)
        seed = link.channel_seed(replicate, PHASE_MEASURE, i)
        noise = link.noise_spectra(seed)
        clean = {}
        for scheme, table in waveform_keys:
            clean[(scheme, table)] = link.clean_spectra(link.packet(bits, table, scheme).waveform)
        real = {vd: realize(prof, i, n, seed) for vd, prof in profiles.items()}
        for scheme, v, d in points:
            table = tables[(scheme, v, d)]
            r = real[(v, d)]
            ber = link.packet_ber(bits, r.gain * clean[(scheme, table)] + noise, table, scheme)
            records[(scheme, v, d)].append(
                PacketRecord(i, scheme, v, d, r.offset_cm, ber, is_lost(ber, cfg.fec_ber_limit))
            )
    results = [
        TrialResult(s, v, d, replicate, cfg.fec_ber_limit, records[(s, v, d)], tables[(s, v, d)])
        for s, v, d in points
    ]
    return sorted(results, key=lambda t: t.key)


def run_point(scheme: str, speed: float, distance: float, cfg: SweepConfig, replicate: int = 0) -> TrialResult:
    return simulate(cfg, [(scheme, speed, distance)], replicate)[0]


def grid_points(cfg: SweepConfig) -> List[Tuple[str, float, float]]:
    return [(s, v, d) for s in SCHEMES if s in cfg.schemes for v in cfg.speeds_cm_s for d in cfg.distances_cm]


def run_grid(cfg: SweepConfig, points=None) -> List[TrialResult]:
    points = grid_points(cfg) if points is None else points
    out = []
    for rep in range(cfg.replicate_count):
        log.info("replicate %d/%d: %d points", rep + 1, cfg.replicate_count, len(points))
        out.extend(simulate(cfg, points, rep))
    return sorted(out, key=lambda t: t.key)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


def _csv(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def results_csv(results: Sequence[TrialResult]) -> str:
    rows = [
        [t.scheme, _fmt(t.speed), _fmt(t.distance), t.replicate, _fmt(t.packet_loss_rate),
         _fmt(t.mean_ber), _fmt(t.percentile(10)), _fmt(t.percentile(90))]
        for t in sorted(results, key=lambda t: t.key)
    ]
    return _csv(rows, RESULTS_HEADER)


def packets_csv(results: Sequence[TrialResult]) -> str:
    rows = []
    for t in sorted(results, key=lambda t: t.key):
        for r in sorted(t.records, key=lambda r: r.packet_index):
            rows.append([t.scheme, _fmt(t.speed), _fmt(t.distance), t.replicate, r.packet_index,
                         _fmt(r.offset_cm), _fmt(r.ber), int(r.lost)])
    return _csv(rows, PACKETS_HEADER)


def loading_csv(results: Sequence[TrialResult]) -> str:
    rows = []
    for t in sorted(results, key=lambda t: t.key):
        if t.scheme != "DMT" or t.loading is None:
            continue
        for k, (b, p) in enumerate(zip(t.loading.bits, t.loading.power)):
            rows.append([t.scheme, _fmt(t.speed), _fmt(t.distance), t.replicate, k + 1, int(b), _fmt(p)])
    return _csv(rows, LOADING_HEADER)


def distribution_rows(bers_by_point: Dict[Tuple[str, float, float], np.ndarray]) -> List[list]:
    if not bers_by_point:
        raise ValueError("distribution report needs at least one point")
    rows = []
    for (s, v, d), b in sorted(bers_by_point.items(), key=lambda kv: (SCHEMES.index(kv[0][0]), kv[0][1], kv[0][2])):
        b = np.asarray(b, dtype=float)
        if b.size == 0:
            raise ValueError(f"no packets for point {(s, v, d)}")
        q = np.percentile(b, [10, 25, 50, 75, 90])
        rows.append([s, _fmt(v), _fmt(d), b.size, _fmt(b.mean())] + [_fmt(x) for x in q])
    return rows


def distribution_report(results: Sequence[TrialResult]) -> str:
    """Per-point BER distribution, pooling replicates."""
    if not results:
        raise ValueError("distribution report needs at least one result")
    pooled: Dict[Tuple[str, float, float], list] = {}
    for t in results:
        pooled.setdefault((t.scheme, t.speed, t.distance), []).extend(t.bers.tolist())
    return _csv(distribution_rows(pooled), DIST_HEADER)


def distribution_from_packets_csv(text: str) -> str:
    reader = csv.DictReader(io.StringIO(text))
    missing = set(PACKETS_HEADER) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"packets CSV lacks columns {sorted(missing)}")
    pooled: Dict[Tuple[str, float, float], list] = {}
    for row in reader:
        key = (row["scheme"], float(row["speed_cm_s"]), float(row["distance_cm"]))
        pooled.setdefault(key, []).append(float(row["ber"]))
    return _csv(distribution_rows(pooled), DIST_HEADER)


def run_sweep(cfg: SweepConfig, out_dir, write_packets: bool = False) -> List[TrialResult]:
    """Run the grid and write results.csv, loading.csv and optionally packets.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_grid(cfg)
    (out / "results.csv").write_text(results_csv(results))
    if "DMT" in cfg.schemes:
        (out / "loading.csv").write_text(loading_csv(results))
    if write_packets:
        (out / "packets.csv").write_text(packets_csv(results))
    return results


# --------------------------------------------------------------------------
# Stationary laser sweeps
# --------------------------------------------------------------------------


def stationary_ber(cfg: SweepConfig, laser: LaserModel, replicate: int = 0) -> Tuple[float, float]:
    """Mean BER and PLR of 4QAM-OFDM with the receiver parked on the beam axis."""
    link = _Link(cfg)
    prof = cfg.mobility.at(0.0, 0.0)
    bers = []
    for i in range(cfg.stationary_packets):
        bits = link.payload(replicate, PHASE_STATIONARY, i)
        seed = link.channel_seed(replicate, PHASE_STATIONARY, i)
        r = realize(prof, i, cfg.stationary_packets, seed)
        wave = link.packet(bits, link.uniform, "OFDM").waveform
        y = r.gain * link.clean_spectra(wave, laser) + link.noise_spectra(seed)
        bers.append(link.packet_ber(bits, y, link.uniform, "OFDM"))
    bers = np.array(bers)
    return float(bers.mean()), float(np.mean(bers > cfg.fec_ber_limit))


def sweep_amplification(cfg: SweepConfig) -> str:
    rows = []
    for a in cfg.amplification_db_sweep:
        ber, plr = stationary_ber(cfg, dataclasses.replace(cfg.laser, amplification_db=a))
        rows.append([_fmt(a), _fmt(ber), _fmt(plr)])
    return _csv(rows, ["amplification_db", "mean_ber", "packet_loss_rate"])


def sweep_bias(cfg: SweepConfig) -> str:
    rows = []
    for b in cfg.bias_v_sweep:
        ber, plr = stationary_ber(cfg, dataclasses.replace(cfg.laser, bias_v=b))
        rows.append([_fmt(b), _fmt(ber), _fmt(plr)])
    return _csv(rows, ["bias_v", "mean_ber", "packet_loss_rate"])
