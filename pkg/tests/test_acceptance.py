"""Acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL line (collected in the terminal summary).
Criteria 6 and 7 share one 20-replicate Monte-Carlo run and take tens of
minutes on a single core; deselect them with ``-m "not slow"``.
"""

import itertools

import numpy as np
import pytest
from scipy.special import erfc

from mobivlc.harness import SweepConfig, run_sweep, simulate, sweep_amplification
from mobivlc.loading import MAX_BITS, SnrProfile, levin_campello, total_power, uniform_loading
from mobivlc.modem import (
    ChannelEstimate,
    OfdmConfig,
    Precoder,
    assemble_spectrum,
    build_packet,
    compute_ber,
    demap_payload,
    demodulate_frame,
    equalize,
    estimate_channel,
    ofdm_modulate,
    training_spectrum,
)
from mobivlc.oct import build_oct, decode

CFG = OfdmConfig()
REPLICATES = 20
SPEEDS = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)
DISTANCES = (30.0, 40.0, 50.0)
HARSH = (40.0, 50.0)


def test_c1_rate_arithmetic(criterion):
    bits_per_symbol = uniform_loading(127).total_bits
    rate = CFG.bit_rate(bits_per_symbol) / 1e6
    criterion("C1 raw rate 288.6 +- 0.1 Mb/s", abs(rate - 288.6) <= 0.1, f"{rate:.4f} Mb/s")


def _loopback(scheme, delay, rng):
    if scheme == "DMT":
        bits = np.tile([1, 2, 3, 4, 5, 6, 0], 19)[:127]
        snr = 2.0 ** bits
        table = levin_campello(SnrProfile(snr * 100), 254)
    else:
        table = uniform_loading(127)
    precoder = Precoder.OCT if scheme == "OCT" else Precoder.NONE
    payload = rng.integers(0, 2, 200 * table.total_bits, dtype=np.uint8)
    pkt = build_packet(payload, table, precoder, CFG, 3)
    w = np.concatenate([np.zeros(delay), pkt.waveform])[: pkt.waveform.size]
    y = demodulate_frame(w, CFG)
    est = estimate_channel(y[:20], training_spectrum(CFG, 3), CFG)
    eq = equalize(y[20:], est) / np.sqrt(np.where(table.bits > 0, table.power, 1.0))
    if precoder is Precoder.OCT:
        eq = decode(eq, build_oct(127))
    return compute_ber(payload, demap_payload(eq, table.bits))


def test_c2_modem_correctness(criterion):
    rng = np.random.default_rng(2)
    worst_ber = max(_loopback(s, m, rng) for s in ("OFDM", "DMT", "OCT") for m in range(9))
    data = rng.standard_normal((1000, 127)) + 1j * rng.standard_normal((1000, 127))
    spec = assemble_spectrum(data, CFG)
    residue = np.abs(np.fft.ifft(spec, axis=-1, norm="ortho").imag).max()
    t = ofdm_modulate(spec, CFG)[:, 8:]
    parseval = np.abs(np.sum(t**2, axis=-1) / np.sum(np.abs(spec) ** 2, axis=-1) - 1).max()
    ok = worst_ber == 0 and residue < 1e-12 and parseval < 1e-9
    criterion(
        "C2 modem: BER 0 for all schemes and delays 0..8, Hermitian, Parseval",
        ok,
        f"worst BER {worst_ber}, imag residue {residue:.1e}, Parseval {parseval:.1e}",
    )


def test_c3_awgn_calibration(criterion):
    table = uniform_loading(127)
    ident = ChannelEstimate(np.ones(127), np.zeros(127))
    details, ok = [], True
    for snr_db in (7.0, 9.0, 11.0):
        gamma = 10 ** (snr_db / 10)
        rng = np.random.default_rng(int(snr_db))
        errors = total = 0
        while total < 1_000_000:
            bits = rng.integers(0, 2, 50_800, dtype=np.uint8)
            w = build_packet(bits, table, Precoder.NONE, CFG, 1).waveform
            w = w + rng.standard_normal(w.size) / np.sqrt(gamma)
            rx = demap_payload(equalize(demodulate_frame(w, CFG)[20:], ident), table.bits)
            errors += np.count_nonzero(rx != bits)
            total += bits.size
        p = 0.5 * erfc(np.sqrt(gamma / 2))
        z = (errors / total - p) / np.sqrt(p * (1 - p) / total)
        ok &= abs(z) < 3
        details.append(f"{snr_db:g} dB z={z:+.2f}")
    criterion("C3 4QAM AWGN BER = Q(sqrt(gamma)) within 3 sigma", ok, ", ".join(details))


def test_c4_oct_properties(criterion):
    orth = 0.0
    for n in (1, 2, 4, 8, 127, 128):
        t = build_oct(n).matrix()
        orth = max(orth, np.abs(t @ t.conj().T - np.eye(n)).max())
        r = build_oct(n, "zc-real").matrix()
        orth = max(orth, np.abs(r @ r.T - np.eye(n)).max())
    rng = np.random.default_rng(4)
    equal = 0.0
    for n in range(1, 17):
        for _ in range(10):
            v = rng.uniform(0.01, 3.0, n)
            t = build_oct(n).matrix()
            d = np.diag(t.conj().T @ np.diag(v) @ t).real
            equal = max(equal, np.abs(d / v.mean() - 1).max())
    criterion(
        "C4 OCT orthogonal and post-decode noise equalized",
        orth < 1e-10 and equal < 1e-9,
        f"max |T T^H - I| {orth:.1e}, max noise spread {equal:.1e}",
    )


def test_c5_loading_optimality(criterion):
    vectors = np.array(list(itertools.product(range(MAX_BITS + 1), repeat=6)))
    sums, cost = vectors.sum(axis=1), 2.0**vectors - 1
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        snr = 10 ** rng.uniform(-1, 4, 6)
        best = np.full(37, np.inf)
        np.minimum.at(best, sums, (cost / snr).sum(axis=1))
        for target in range(25):
            got = total_power(levin_campello(SnrProfile(snr, 1.0), target).bits, snr)
            worst = max(worst, abs(got - best[target]) / max(best[target], 1e-300))
    criterion("C5 Levin-Campello power equals exhaustive minimum", worst < 1e-9, f"max rel diff {worst:.1e}")


# ---- Monte-Carlo criteria -------------------------------------------------


@pytest.fixture(scope="module")
def mobility_runs():
    """PLR per point and replicate: OFDM on the full grid plus DMT/OCT at the harsh points."""
    cfg = SweepConfig()
    points = [("OFDM", v, d) for v in SPEEDS for d in DISTANCES]
    points += [(s, v, 50.0) for s in ("DMT", "OCT") for v in HARSH]
    plr, spread = {}, {}
    for rep in range(REPLICATES):
        for t in simulate(cfg, points, rep):
            plr.setdefault((t.scheme, t.speed, t.distance), []).append(t.packet_loss_rate)
            spread.setdefault((t.scheme, t.speed, t.distance), []).extend(t.bers.tolist())
    return {k: np.array(v) for k, v in plr.items()}, spread


@pytest.mark.slow
def test_c6_mobility_monotonicity(criterion, mobility_runs):
    plr, _ = mobility_runs
    mean = {k: v.mean() for k, v in plr.items() if k[0] == "OFDM"}
    by_distance = all(
        mean[("OFDM", v, a)] <= mean[("OFDM", v, b)] for v in SPEEDS for a, b in zip(DISTANCES, DISTANCES[1:])
    )
    by_speed = all(
        mean[("OFDM", a, d)] <= mean[("OFDM", b, d)] for d in DISTANCES for a, b in zip(SPEEDS, SPEEDS[1:])
    )
    table = "; ".join(
        f"d={d:g}: " + " ".join(f"{mean[('OFDM', v, d)]:.3f}" for v in SPEEDS) for d in DISTANCES
    )
    criterion("C6 OFDM PLR nondecreasing in distance and speed (20 replicates)", by_distance and by_speed, table)


@pytest.mark.slow
def test_c6_ber_range_widens_with_speed(criterion, mobility_runs):
    _, bers = mobility_runs
    width = [np.subtract(*np.percentile(bers[("OFDM", v, 50.0)], [90, 10])) for v in SPEEDS]
    ok = all(a <= b for a, b in zip(width, width[1:]))
    criterion("C6b OFDM BER p90-p10 range nondecreasing in speed at d=50", ok,
              " ".join(f"{w:.2e}" for w in width))


@pytest.mark.slow
def test_c7_scheme_ordering(criterion, mobility_runs):
    plr, _ = mobility_runs
    ok, details = True, []
    for v in HARSH:
        a = {s: plr[(s, v, 50.0)] for s in ("OCT", "DMT", "OFDM")}
        for lo, hi in (("OCT", "DMT"), ("DMT", "OFDM")):
            diff = a[hi] - a[lo]
            se = diff.std(ddof=1) / np.sqrt(diff.size)
            z = diff.mean() / se if se > 0 else np.inf
            # unpaired SE, shown for comparison only
            se_u = np.hypot(a[hi].std(ddof=1), a[lo].std(ddof=1)) / np.sqrt(diff.size)
            ok &= z >= 2
            details.append(f"v={v:g} {hi}-{lo} {diff.mean():+.4f} ({z:.1f} paired SE, {diff.mean() / se_u:.1f} unpaired)")
        details.append(f"v={v:g} means " + "/".join(f"{a[s].mean():.3f}" for s in a))
    criterion("C7 PLR(OCT) <= PLR(DMT) <= PLR(OFDM) at v>=40, d=50, gaps >= 2 paired SE", ok, "; ".join(details))


@pytest.mark.slow
def test_c7_ofdm_loss_exceeds_half(criterion, mobility_runs):
    # Not reachable together with C6 in this model; see the README section on
    # the mobility hypothesis.  Left failing on purpose.
    plr, _ = mobility_runs
    harsh = plr[("OFDM", 50.0, 50.0)].mean()
    criterion("C7b OFDM PLR at v=50, d=50 exceeds 50%", harsh > 0.5, f"mean PLR {harsh:.3f}")


def test_c8_amplification_optimum(criterion):
    text = sweep_amplification(SweepConfig())
    rows = [line.split(",") for line in text.splitlines()[1:]]
    db = np.array([float(r[0]) for r in rows])
    ber = np.array([float(r[1]) for r in rows])
    k = int(np.argmin(ber))
    strict = 0 < k < ber.size - 1 and np.count_nonzero(ber == ber[k]) == 1
    strict = strict and ber[k] < ber[0] and ber[k] < ber[-1]
    criterion("C8 BER vs amplification has a strict interior minimum", bool(strict),
              f"min {ber[k]:.2e} at {db[k]:g} dB, ends {ber[0]:.2e} / {ber[-1]:.2e}")


def test_c9_determinism(criterion, tmp_path):
    cfg = SweepConfig(packets_per_point=10, calibration_packets=4)
    run_sweep(cfg, tmp_path / "a")
    run_sweep(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "results.csv").read_bytes()
    b = (tmp_path / "b" / "results.csv").read_bytes()
    criterion("C9 identical master_seed gives byte-identical results.csv", a == b,
              f"{len(a)} bytes, 54 points x 10 packets")
