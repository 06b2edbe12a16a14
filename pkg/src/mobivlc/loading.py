"""Margin-adaptive bit and power loading for DMT.

The rate is fixed and the transmit power is minimized: Levin-Campello
greedy bit filling over per-subcarrier SNR estimates, capped at 64-QAM.
"""

from __future__ import annotations

import csv
import heapq
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .modem import ChannelEstimate, OfdmConfig, Precoder, build_packet, demodulate_frame, estimate_channel, training_spectrum

MAX_BITS = 6
DEFAULT_GAP_DB = 9.8
DEFAULT_SNR_CEILING = 1e6


class InfeasibleLoading(ValueError):
    """The requested rate cannot be carried by the usable subcarriers."""


@dataclass(frozen=True)
class LoadingTable:
    bits: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=int)
        p = np.asarray(self.power, dtype=float)
        if b.shape != p.shape:
            raise ValueError("bits and power lengths differ")
        if np.any((b < 0) | (b > MAX_BITS)):
            raise ValueError(f"bits must lie in 0..{MAX_BITS}")
        if np.any(p < 0) or np.any(p[b == 0] != 0):
            raise ValueError("power must be nonnegative and zero on unloaded subcarriers")
        b.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "power", p)

    @property
    def total_bits(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return (
            isinstance(other, LoadingTable)
            and np.array_equal(self.bits, other.bits)
            and np.array_equal(self.power, other.power)
        )

    def __hash__(self):
        return hash((self.bits.tobytes(), self.power.tobytes()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subcarrier", "bits", "power"])
        for k, (b, p) in enumerate(zip(self.bits, self.power)):
            w.writerow([k + 1, int(b), repr(float(p))])
        return buf.getvalue()


def uniform_loading(n: int, bits: int = 2) -> LoadingTable:
    return LoadingTable(np.full(n, bits), np.ones(n) if bits else np.zeros(n))


@dataclass(frozen=True)
class SnrProfile:
    snr: np.ndarray
    gap: float = 10 ** (DEFAULT_GAP_DB / 10)

    def __post_init__(self):
        s = np.asarray(self.snr, dtype=float)
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("snr must be finite and nonnegative")
        if self.gap < 1:
            raise ValueError("gap must be >= 1 (linear)")
        object.__setattr__(self, "snr", s)


def snr_from_estimate(
    est: ChannelEstimate,
    tx_power_per_bin: float = 1.0,
    gap: float = 10 ** (DEFAULT_GAP_DB / 10),
    snr_ceiling: float = DEFAULT_SNR_CEILING,
) -> SnrProfile:
    g2 = np.abs(est.gain) ** 2
    if not np.any(g2 > 0):
        raise InfeasibleLoading("channel estimate has no usable subcarrier")
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = tx_power_per_bin * g2 / est.noise_var
    snr = np.where(g2 == 0, 0.0, snr)
    snr = np.where((est.noise_var == 0) & (g2 > 0), snr_ceiling, snr)
    return SnrProfile(np.minimum(snr, snr_ceiling), gap)


def levin_campello(profile: SnrProfile, target_bits: int) -> LoadingTable:
    """Greedy minimum-power bit filling to exactly ``target_bits``.

    The cost of the (b+1)-th bit on subcarrier k is gap * 2^b / snr[k].  It
    grows with b, so always taking the cheapest next bit is optimal.  Ties go
    to the lower subcarrier index.  Powers are rescaled to unit mean over
    the loaded subcarriers.
    """
    snr = profile.snr
    n = snr.size
    usable = snr > 0
    if target_bits < 0:
        raise InfeasibleLoading(f"negative target {target_bits}")
    if target_bits > MAX_BITS * int(usable.sum()):
        raise InfeasibleLoading(
            f"target {target_bits} exceeds {MAX_BITS} bits x {int(usable.sum())} usable subcarriers"
        )
    bits = np.zeros(n, dtype=int)
    heap = [(profile.gap / snr[k], k) for k in np.flatnonzero(usable)]
    heapq.heapify(heap)
    for _ in range(target_bits):
        cost, k = heapq.heappop(heap)
        bits[k] += 1
        if bits[k] < MAX_BITS:
            heapq.heappush(heap, (profile.gap * 2.0 ** bits[k] / snr[k], k))
    power = np.zeros(n)
    on = bits > 0
    power[on] = profile.gap * (2.0 ** bits[on] - 1) / snr[on]
    if on.any():
        power[on] /= power[on].mean()
    return LoadingTable(bits, power)


def total_power(bits, snr, gap: float = 1.0) -> float:
    """Unnormalized power needed for a bit vector (the loading objective)."""
    bits = np.asarray(bits)
    snr = np.asarray(snr, dtype=float)
    on = bits > 0
    if np.any(snr[on] == 0):
        return np.inf
    return float(np.sum(gap * (2.0 ** bits[on] - 1) / snr[on]))


def average_estimates(estimates: Iterable[ChannelEstimate]) -> ChannelEstimate:
    """Coherent mean of gains, arithmetic mean of noise variances."""
    est = list(estimates)
    if not est:
        raise ValueError("no estimates to average")
    return ChannelEstimate(
        np.mean([e.gain for e in est], axis=0), np.mean([e.noise_var for e in est], axis=0)
    )


ChannelRunner = Callable[[object, int], np.ndarray]


def calibrate(
    scheme: str,
    channel_runner: Optional[ChannelRunner],
    cfg: OfdmConfig,
    *,
    probe_payloads: Optional[Iterable[np.ndarray]] = None,
    n_probes: int = 20,
    training_seed: int = 0,
    target_bits: Optional[int] = None,
    gap: float = 10 ** (DEFAULT_GAP_DB / 10),
) -> LoadingTable:
    """Loading table for a scheme.

    OFDM and OCT get the uniform 4QAM table and never touch the channel.
    DMT sends ``n_probes`` uniform-4QAM probe packets through
    ``channel_runner(packet, probe_index)``, averages the per-packet
    estimates and loads on the resulting SNR profile.
    """
    n = cfg.n_data_subcarriers
    uniform = uniform_loading(n)
    if scheme in ("OFDM", "OCT"):
        return uniform
    if scheme != "DMT":
        raise ValueError(f"unknown scheme {scheme!r}")
    if target_bits is None:
        target_bits = uniform.total_bits
    ref = training_spectrum(cfg, training_seed)
    payloads = list(probe_payloads) if probe_payloads is not None else None
    estimates = []
    for j in range(n_probes):
        if payloads is not None:
            bits = payloads[j]
        else:
            bits = np.random.default_rng(j).integers(0, 2, uniform.total_bits * cfg.n_data_symbols, dtype=np.uint8)
        pkt = build_packet(bits, uniform, Precoder.NONE, cfg, training_seed)
        spectra = demodulate_frame(channel_runner(pkt, j), cfg)
        estimates.append(estimate_channel(spectra[: cfg.n_training_symbols], ref, cfg))
    profile = snr_from_estimate(average_estimates(estimates), 1.0, gap)
    return levin_campello(profile, target_bits)
