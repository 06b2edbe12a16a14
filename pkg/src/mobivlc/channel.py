"""Mobile laser VLC link model.

The chain is: unit-RMS normalization, drive amplification, clipped-linear
laser transfer, AC coupling, geometric beam roll-off times a per-packet
lognormal gain jitter, a first-order low-pass, and receiver noise added at
the ADC rate between a pair of polyphase resamplers.

Speed enters only through the jitter (sigma = jitter_coeff * speed).  That
is a modeling hypothesis: the receiver moves well under a millimetre within
one packet, so geometry alone cannot explain a strong speed dependence.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import signal

from .modem import OfdmConfig


class Trajectory(str, enum.Enum):
    TRIANGLE = "Triangle"
    ONE_WAY = "OneWay"


@dataclass(frozen=True)
class LaserModel:
    bias_v: float = 6.0
    threshold_v: float = 4.0
    saturation_v: float = 8.0
    amplification_db: float = 25.0
    drive_rms_v_at_0db: float = 0.05
    responsivity_slope: float = 1.0

    def __post_init__(self):
        if not self.threshold_v < self.bias_v < self.saturation_v:
            raise ValueError(
                f"need threshold < bias < saturation, got "
                f"{self.threshold_v} / {self.bias_v} / {self.saturation_v}"
            )
        if not np.isfinite(self.amplification_db):
            raise ValueError("amplification_db must be finite")


@dataclass(frozen=True)
class MobilityProfile:
    lateral_distance_cm: float = 50.0
    speed_cm_s: float = 0.0
    trajectory: Trajectory = Trajectory.TRIANGLE
    beam_sigma_cm: float = 25.0
    jitter_coeff: float = 0.004
    capture_periods: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "trajectory", Trajectory(self.trajectory))
        if self.lateral_distance_cm < 0 or self.speed_cm_s < 0:
            raise ValueError("distance and speed must be nonnegative")
        if self.beam_sigma_cm <= 0:
            raise ValueError("beam_sigma_cm must be positive")
        if self.jitter_coeff < 0:
            raise ValueError("jitter_coeff must be nonnegative")
        if self.capture_periods <= 0:
            raise ValueError("capture_periods must be positive")

    @property
    def jitter_sigma(self) -> float:
        return self.jitter_coeff * self.speed_cm_s

    def at(self, speed_cm_s: float, lateral_distance_cm: float) -> "MobilityProfile":
        return replace(self, speed_cm_s=speed_cm_s, lateral_distance_cm=lateral_distance_cm)


@dataclass(frozen=True)
class LinkResponse:
    f3db_hz: float = 60e6
    noise_std: float = 0.05
    include_resampling: bool = True

    def __post_init__(self):
        if self.f3db_hz <= 0:
            raise ValueError("f3db_hz must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


@dataclass(frozen=True)
class ChannelRealization:
    packet_index: int
    time_s: float
    offset_cm: float
    geometric_gain: float
    jitter_gain: float
    rng_seed: int

    @property
    def gain(self) -> float:
        return self.geometric_gain * self.jitter_gain


# --------------------------------------------------------------------------
# Geometry
# --------------------------------------------------------------------------


def trajectory_offset(t_s: float, profile: MobilityProfile) -> float:
    """Lateral receiver offset (cm) at time t; starts at -d/2."""
    d, v = profile.lateral_distance_cm, profile.speed_cm_s
    if v == 0 or d == 0:
        return -d / 2
    travelled = v * t_s
    if profile.trajectory is Trajectory.ONE_WAY:
        return -d / 2 + min(travelled, d)
    phase = travelled % (2 * d)
    return -d / 2 + (phase if phase <= d else 2 * d - phase)


def beam_gain(offset_cm: float, profile: MobilityProfile) -> float:
    w = profile.beam_sigma_cm
    return float(np.exp(-(offset_cm**2) / (2 * w * w)))


def capture_time(packet_index: int, n_packets: int, profile: MobilityProfile) -> float:
    """Capture instants are spread evenly over ``capture_periods`` traversal periods."""
    d, v = profile.lateral_distance_cm, profile.speed_cm_s
    if v == 0 or d == 0 or n_packets <= 0:
        return 0.0
    window = profile.capture_periods * 2 * d / v
    return packet_index * window / n_packets


def realize(
    profile: MobilityProfile, packet_index: int, n_packets: int, rng_seed: int
) -> ChannelRealization:
    """Deterministic per-packet channel state.

    The first normal draw of the packet's generator sets the jitter, so the
    same seed yields the same standard-normal deviate at every speed.
    """
    t = capture_time(packet_index, n_packets, profile)
    off = trajectory_offset(t, profile)
    z = np.random.default_rng(rng_seed).standard_normal()
    jitter = float(np.exp(profile.jitter_sigma * z))
    return ChannelRealization(packet_index, t, off, beam_gain(off, profile), jitter, rng_seed)


# --------------------------------------------------------------------------
# Analog front end
# --------------------------------------------------------------------------


def amplify(unit_rms_waveform, model: LaserModel) -> np.ndarray:
    scale = model.drive_rms_v_at_0db * 10 ** (model.amplification_db / 20)
    return np.asarray(unit_rms_waveform, dtype=float) * scale


def laser_transfer(drive, model: LaserModel) -> np.ndarray:
    """Clipped-linear intensity: zero below threshold, flat above saturation."""
    v = model.bias_v + np.asarray(drive, dtype=float)
    span = model.saturation_v - model.threshold_v
    return model.responsivity_slope * np.clip(v - model.threshold_v, 0.0, span)


def lowpass(samples, response: LinkResponse, rate: float) -> np.ndarray:
    """First-order IIR, unit DC gain, zero initial state."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    a = 1.0 - np.exp(-2 * np.pi * response.f3db_hz / rate)
    return signal.lfilter([a], [1.0, a - 1.0], np.asarray(samples, dtype=float))


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

TAPS_PER_PHASE = 24
KAISER_BETA = 8.0
MAX_RATIO_TERM = 64


def _ratio(from_rate: float, to_rate: float) -> Fraction:
    r = Fraction(to_rate).limit_denominator(10**6) / Fraction(from_rate).limit_denominator(10**6)
    if abs(float(r) - to_rate / from_rate) > 1e-12 * to_rate / from_rate:
        raise ValueError(f"rate ratio {to_rate}/{from_rate} is not a usable rational")
    if r.numerator > MAX_RATIO_TERM or r.denominator > MAX_RATIO_TERM:
        raise ValueError(f"rate ratio {r} needs terms <= {MAX_RATIO_TERM}")
    return r


@lru_cache(maxsize=None)
def resampling_kernel(up: int, down: int) -> np.ndarray:
    """Kaiser windowed-sinc with TAPS_PER_PHASE taps per polyphase branch.

    Each branch is scaled to a DC gain of exactly 1/up so a constant input
    comes out constant (resample_poly multiplies the kernel by ``up``).
    """
    m = max(up, down)
    h = signal.firwin(TAPS_PER_PHASE * m + 1, 1.0 / m, window=("kaiser", KAISER_BETA))
    for p in range(up):
        h[p::up] *= (1.0 / up) / h[p::up].sum()
    h.setflags(write=False)
    return h


def resample(samples, from_rate: float, to_rate: float) -> np.ndarray:
    """Polyphase rational resampling with group delay compensated.

    The ends are padded along the line through the first and last samples,
    so a constant or ramp passes through without an edge transient.
    """
    r = _ratio(from_rate, to_rate)
    x = np.asarray(samples, dtype=float)
    if r == 1:
        return x.copy()
    up, down = r.numerator, r.denominator
    return signal.resample_poly(x, up, down, window=resampling_kernel(up, down), padtype="line")


# --------------------------------------------------------------------------
# Full link
# --------------------------------------------------------------------------


def front_end(waveform, model: LaserModel) -> np.ndarray:
    """Normalize, amplify, drive the laser and AC-couple."""
    x = np.asarray(waveform, dtype=float)
    rms = np.sqrt(np.mean(x * x))
    unit = x / rms if rms > 0 else x
    light = laser_transfer(amplify(unit, model), model)
    return light - light.mean()


def _adc_len(n: int, cfg: OfdmConfig) -> int:
    r = cfg.rate_ratio
    return -(-n * r.numerator // r.denominator)


def transmit_packet(
    waveform,
    realization: ChannelRealization,
    profile: MobilityProfile,
    model: LaserModel,
    response: LinkResponse,
    cfg: OfdmConfig = OfdmConfig(),
) -> np.ndarray:
    """Pass one DAC-rate packet through the link; returns DAC-rate samples."""
    x = front_end(waveform, model) * realization.gain
    x = lowpass(x, response, cfg.dac_rate)
    rng = np.random.default_rng(realization.rng_seed)
    rng.standard_normal()  # jitter draw, consumed by realize()
    if response.include_resampling:
        y = resample(x, cfg.dac_rate, cfg.adc_rate)
        y = y + response.noise_std * rng.standard_normal(y.size)
        y = resample(y, cfg.adc_rate, cfg.dac_rate)
        return y[: x.size]
    return x + response.noise_std * rng.standard_normal(x.size)


def signal_path(waveform, model: LaserModel, response: LinkResponse, cfg: OfdmConfig) -> np.ndarray:
    """Noiseless received packet at unit gain.

    Everything after the laser is linear, so the transmit_packet output
    equals ``realization.gain * signal_path(...) + receiver_noise(...)``.
    """
    x = lowpass(front_end(waveform, model), response, cfg.dac_rate)
    if response.include_resampling:
        x = resample(resample(x, cfg.dac_rate, cfg.adc_rate), cfg.adc_rate, cfg.dac_rate)[
            : cfg.packet_len
        ]
    return x


def receiver_noise(rng_seed: int, n_samples: int, response: LinkResponse, cfg: OfdmConfig) -> np.ndarray:
    """The noise component transmit_packet adds for a packet with this seed."""
    rng = np.random.default_rng(rng_seed)
    rng.standard_normal()
    if response.include_resampling:
        n_adc = _adc_len(n_samples, cfg)
        noise = response.noise_std * rng.standard_normal(n_adc)
        return resample(noise, cfg.adc_rate, cfg.dac_rate)[:n_samples]
    return response.noise_std * rng.standard_normal(n_samples)
