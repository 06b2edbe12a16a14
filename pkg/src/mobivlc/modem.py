"""Real-valued OFDM/DMT baseband modem.

Gray QAM mapping, Hermitian framing with cyclic prefix, least-squares
channel estimation from repeated training symbols, one-tap zero-forcing
equalization and BER accounting.  Data occupies bins 1..n_data_subcarriers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SUPPORTED_ORDERS = (2, 4, 8, 16, 32, 64)


class Precoder(str, enum.Enum):
    NONE = "None"
    OCT = "OCT"


@dataclass(frozen=True)
class OfdmConfig:
    """Frame geometry and converter rates."""

    fft_size: int = 256
    cp_ratio: Fraction = Fraction(1, 32)
    n_data_subcarriers: int = 127
    n_data_symbols: int = 200
    n_training_symbols: int = 20
    dac_rate: float = 300e6
    adc_rate: float = 625e6

    def __post_init__(self):
        object.__setattr__(self, "cp_ratio", Fraction(self.cp_ratio))
        if self.fft_size <= 0 or self.fft_size % 2:
            raise ValueError(f"fft_size must be a positive even integer, got {self.fft_size}")
        if not 1 <= self.n_data_subcarriers <= self.fft_size // 2 - 1:
            raise ValueError(
                f"n_data_subcarriers must lie in [1, {self.fft_size // 2 - 1}], "
                f"got {self.n_data_subcarriers}"
            )
        cp = self.fft_size * self.cp_ratio
        if cp.denominator != 1 or cp < 0:
            raise ValueError(f"cp_len = fft_size*cp_ratio = {cp} is not a whole sample count")
        if self.n_data_symbols < 0 or self.n_training_symbols < 0:
            raise ValueError("symbol counts must be nonnegative")
        if self.dac_rate <= 0 or self.adc_rate <= 0:
            raise ValueError("converter rates must be positive")

    @property
    def cp_len(self) -> int:
        return int(self.fft_size * self.cp_ratio)

    @property
    def symbol_len(self) -> int:
        return self.fft_size + self.cp_len

    @property
    def n_symbols(self) -> int:
        return self.n_training_symbols + self.n_data_symbols

    @property
    def packet_len(self) -> int:
        return self.n_symbols * self.symbol_len

    @property
    def data_bins(self) -> slice:
        return slice(1, self.n_data_subcarriers + 1)

    @property
    def packet_duration_s(self) -> float:
        return self.packet_len / self.dac_rate

    @property
    def rate_ratio(self) -> Fraction:
        """adc_rate / dac_rate as an exact fraction (625/300 -> 25/12)."""
        return Fraction(self.adc_rate).limit_denominator(10**6) / Fraction(
            self.dac_rate
        ).limit_denominator(10**6)

    def bit_rate(self, bits_per_symbol: int) -> float:
        """Raw line rate in bit/s for a given number of bits per OFDM symbol."""
        return self.dac_rate * bits_per_symbol / self.symbol_len


# --------------------------------------------------------------------------
# Gray QAM
# --------------------------------------------------------------------------


def _gray_pam_levels(n_bits: int) -> np.ndarray:
    """Amplitude of each Gray label; label 0 sits on the most positive level."""
    m = 1 << n_bits
    pos = np.arange(m)
    levels = (m - 1 - 2 * pos).astype(float)
    out = np.empty(m)
    out[pos ^ (pos >> 1)] = levels
    return out


@lru_cache(maxsize=None)
def constellation(order: int) -> np.ndarray:
    """Unit-energy rectangular Gray constellation indexed by integer label.

    The label's leading ceil(m/2) bits select the in-phase level and the
    remaining bits the quadrature level, so odd orders (2, 8, 32) are 2x1,
    4x2 and 8x4 rectangles.
    """
    order = int(order)
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; expected one of {SUPPORTED_ORDERS}")
    m = order.bit_length() - 1
    m_i, m_q = (m + 1) // 2, m // 2
    i_lv = _gray_pam_levels(m_i)
    q_lv = _gray_pam_levels(m_q) if m_q else np.zeros(1)
    labels = np.arange(order)
    pts = i_lv[labels >> m_q] + 1j * q_lv[labels & ((1 << m_q) - 1)]
    pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
    pts.setflags(write=False)
    return pts


def _bits_per_symbol(order: int) -> int:
    order = int(order)
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; expected one of {SUPPORTED_ORDERS}")
    return order.bit_length() - 1


def qam_modulate(bits, order: int) -> np.ndarray:
    """Map a flat bit array (MSB first per symbol) to constellation points."""
    m = _bits_per_symbol(order)
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % m:
        raise ValueError(f"bit count {bits.size} is not a multiple of {m}")
    weights = 1 << np.arange(m - 1, -1, -1)
    labels = bits.reshape(-1, m) @ weights
    return constellation(order)[labels]


def qam_demodulate(symbols, order: int) -> np.ndarray:
    """Hard-decision minimum-distance demapping; ties go to the smaller label."""
    m = _bits_per_symbol(order)
    pts = constellation(order)
    y = np.asarray(symbols, dtype=complex).reshape(-1)
    d = (y.real[:, None] - pts.real) ** 2 + (y.imag[:, None] - pts.imag) ** 2
    labels = np.argmin(d, axis=1)
    shifts = np.arange(m - 1, -1, -1)
    return ((labels[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)


def gray_qam_map(bits: Sequence[int], order: int) -> complex:
    """Single-symbol Gray mapping; ``len(bits)`` must equal log2(order)."""
    m = _bits_per_symbol(order)
    if len(bits) != m:
        raise ValueError(f"order {order} takes {m} bits, got {len(bits)}")
    return complex(qam_modulate(bits, order)[0])


def gray_qam_demap(symbol: complex, order: int) -> np.ndarray:
    return qam_demodulate([symbol], order)


# --------------------------------------------------------------------------
# Framing
# --------------------------------------------------------------------------


def assemble_spectrum(data_symbols, cfg: OfdmConfig) -> np.ndarray:
    """Place data on bins 1..n and fill the conjugate mirror.

    Accepts a trailing axis of length n_data_subcarriers; leading axes are
    treated as a batch of symbols.
    """
    x = np.asarray(data_symbols, dtype=complex)
    if x.shape[-1:] != (cfg.n_data_subcarriers,):
        raise ValueError(
            f"expected trailing length {cfg.n_data_subcarriers}, got shape {x.shape}"
        )
    n = cfg.fft_size
    spec = np.zeros(x.shape[:-1] + (n,), dtype=complex)
    k = np.arange(1, cfg.n_data_subcarriers + 1)
    spec[..., k] = x
    spec[..., n - k] = np.conj(x)
    return spec


def ofdm_modulate(spectrum, cfg: OfdmConfig) -> np.ndarray:
    """Unitary IDFT, real part, cyclic prefix.  Batched along leading axes."""
    spec = np.asarray(spectrum, dtype=complex)
    if spec.shape[-1] != cfg.fft_size:
        raise ValueError(f"spectrum length {spec.shape[-1]} != fft_size {cfg.fft_size}")
    t = np.fft.ifft(spec, axis=-1, norm="ortho").real
    if cfg.cp_len:
        t = np.concatenate([t[..., -cfg.cp_len:], t], axis=-1)
    return t


def ofdm_demodulate(samples, cfg: OfdmConfig) -> np.ndarray:
    """Drop the cyclic prefix and apply the unitary DFT."""
    s = np.asarray(samples, dtype=float)
    if s.shape[-1] != cfg.symbol_len:
        raise ValueError(f"symbol length {s.shape[-1]} != {cfg.symbol_len}")
    return np.fft.fft(s[..., cfg.cp_len:], axis=-1, norm="ortho")


def demodulate_frame(samples, cfg: OfdmConfig) -> np.ndarray:
    """Split a packet waveform into symbols and return their spectra, shape (n_symbols, fft_size)."""
    s = np.asarray(samples, dtype=float)
    if s.size != cfg.packet_len:
        raise ValueError(f"packet length {s.size} != {cfg.packet_len}")
    return ofdm_demodulate(s.reshape(cfg.n_symbols, cfg.symbol_len), cfg)


# --------------------------------------------------------------------------
# Packets
# --------------------------------------------------------------------------


def training_symbols(cfg: OfdmConfig, training_seed: int) -> np.ndarray:
    """The pseudorandom 4QAM training vector on the data subcarriers."""
    rng = np.random.default_rng(training_seed)
    bits = rng.integers(0, 2, size=2 * cfg.n_data_subcarriers, dtype=np.uint8)
    return qam_modulate(bits, 4)


def training_spectrum(cfg: OfdmConfig, training_seed: int) -> np.ndarray:
    return assemble_spectrum(training_symbols(cfg, training_seed), cfg)


def map_payload(payload_bits, bits_per_subcarrier, n_symbols: int) -> np.ndarray:
    """Map a payload onto an (n_symbols, n_subcarriers) grid.

    Each OFDM symbol consumes sum(bits) payload bits; within a symbol,
    subcarrier k takes the next bits[k] bits.  Unloaded subcarriers get 0.
    """
    alloc = np.asarray(bits_per_subcarrier, dtype=int)
    per_sym = int(alloc.sum())
    bits = np.asarray(payload_bits, dtype=np.uint8)
    if bits.size != n_symbols * per_sym:
        raise ValueError(
            f"payload has {bits.size} bits, loading needs {n_symbols}*{per_sym}"
        )
    out = np.zeros((n_symbols, alloc.size), dtype=complex)
    if per_sym == 0:
        return out
    rows = bits.reshape(n_symbols, per_sym)
    offsets = np.concatenate([[0], np.cumsum(alloc)[:-1]])
    for b in np.unique(alloc[alloc > 0]):
        ks = np.flatnonzero(alloc == b)
        cols = offsets[ks][:, None] + np.arange(b)
        out[:, ks] = qam_modulate(rows[:, cols].reshape(-1), 1 << int(b)).reshape(n_symbols, ks.size)
    return out


def demap_payload(symbols, bits_per_subcarrier) -> np.ndarray:
    """Inverse of :func:`map_payload` with hard decisions."""
    alloc = np.asarray(bits_per_subcarrier, dtype=int)
    y = np.asarray(symbols, dtype=complex)
    n_symbols = y.shape[0]
    per_sym = int(alloc.sum())
    rows = np.zeros((n_symbols, per_sym), dtype=np.uint8)
    offsets = np.concatenate([[0], np.cumsum(alloc)[:-1]])
    for b in np.unique(alloc[alloc > 0]):
        ks = np.flatnonzero(alloc == b)
        cols = offsets[ks][:, None] + np.arange(b)
        rows[:, cols] = qam_demodulate(y[:, ks].reshape(-1), 1 << int(b)).reshape(n_symbols, ks.size, b)
    return rows.reshape(-1)


@dataclass
class Packet:
    payload_bits: np.ndarray
    loading: object  # LoadingTable
    precoder: Precoder
    waveform: np.ndarray
    data_grid: Optional[np.ndarray] = field(default=None, repr=False)


def build_packet(
    payload_bits,
    loading,
    precoder: Precoder,
    cfg: OfdmConfig,
    training_seed: int,
    oct=None,
) -> Packet:
    """Training block followed by the loaded (optionally precoded) data block."""
    precoder = Precoder(precoder)
    bits = np.asarray(payload_bits, dtype=np.uint8).reshape(-1)
    alloc = np.asarray(loading.bits, dtype=int)
    power = np.asarray(loading.power, dtype=float)
    if alloc.size != cfg.n_data_subcarriers:
        raise ValueError("loading table does not match n_data_subcarriers")
    # an all-zero loading carries nothing, so the packet is training only
    n_symbols = cfg.n_data_symbols if alloc.any() else 0
    grid = map_payload(bits, alloc, n_symbols)
    if precoder is Precoder.OCT:
        if oct is None:
            from .oct import build_oct

            oct = build_oct(cfg.n_data_subcarriers)
        from .oct import precode

        grid = precode(grid, oct)
    grid = grid * np.sqrt(power)
    train = np.broadcast_to(
        training_symbols(cfg, training_seed), (cfg.n_training_symbols, cfg.n_data_subcarriers)
    )
    spectra = assemble_spectrum(np.concatenate([train, grid]), cfg)
    waveform = ofdm_modulate(spectra, cfg).reshape(-1)
    return Packet(bits, loading, precoder, waveform, grid)


def write_waveform(directory, index: int, waveform) -> Path:
    """Dump one packet as little-endian float32 to ``pkt_<index>.f32``."""
    path = Path(directory) / f"pkt_{index}.f32"
    path.parent.mkdir(parents=True, exist_ok=True)
    np.asarray(waveform, dtype="<f4").tofile(path)
    return path


# --------------------------------------------------------------------------
# Receiver
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelEstimate:
    gain: np.ndarray
    noise_var: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gain, dtype=complex)
        v = np.asarray(self.noise_var, dtype=float)
        if g.shape != v.shape:
            raise ValueError("gain and noise_var lengths differ")
        if np.any(v < 0):
            raise ValueError("noise_var must be nonnegative")
        object.__setattr__(self, "gain", g)
        object.__setattr__(self, "noise_var", v)


def _data_bins(x, cfg: OfdmConfig) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.shape[-1] == cfg.fft_size:
        return x[..., cfg.data_bins]
    if x.shape[-1] == cfg.n_data_subcarriers:
        return x
    raise ValueError(f"unexpected trailing length {x.shape[-1]}")


def estimate_channel(received_training, reference_training, cfg: OfdmConfig) -> ChannelEstimate:
    """Per-subcarrier LS gain and unbiased residual variance over repeated training.

    Inputs may be full spectra (fft_size bins) or data bins only.
    """
    y = _data_bins(received_training, cfg)
    x = _data_bins(reference_training, cfg)
    if y.ndim != 2 or y.shape[0] < 2:
        raise ValueError("need at least two training symbols to estimate noise variance")
    if np.any(x == 0):
        raise ValueError("reference training has a zero on a data subcarrier")
    h = np.mean(y / x, axis=0)
    resid = y - h * x
    var = np.sum(np.abs(resid - resid.mean(axis=0)) ** 2, axis=0) / (y.shape[0] - 1)
    return ChannelEstimate(h, var)


def equalize(spectrum, est: ChannelEstimate) -> np.ndarray:
    """Zero-forcing Y/H on the data subcarriers.

    Subcarriers with H = 0 come back as NaN; the caller decides whether
    that loses the packet (it does whenever the subcarrier is loaded).
    """
    y = np.asarray(spectrum, dtype=complex)
    n = est.gain.size
    if y.shape[-1] != n:
        y = y[..., 1 : n + 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = y / est.gain
    out[..., est.gain == 0] = np.nan
    return out


def compute_ber(tx_bits, rx_bits) -> float:
    tx = np.asarray(tx_bits).reshape(-1)
    rx = np.asarray(rx_bits).reshape(-1)
    if tx.size != rx.size:
        raise ValueError(f"length mismatch: {tx.size} vs {rx.size}")
    if tx.size == 0:
        raise ValueError("cannot compute BER of empty sequences")
    return float(np.count_nonzero(tx != rx)) / tx.size
