"""Frozen-filter evaluation: ML symbol decisions, SER, Nyquist diagnostics, eyes.

Decisions use a genie-labelled pilot segment to estimate per-level conditional
means and a pooled noise variance; with equal variances the ML rule reduces to
nearest conditional mean, so the decision model is invariant to any affine
scaling of the receive chain.  The theory oracle, folded-spectrum flatness
metric and eye diagnostics mirror the quantities usually plotted for this
class of link.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .errors import EstimationError
from .link import (
    LinkSimulator,
    SyncInfo,
    aligned_symbols,
    aligned_target,
    decision_symbol_energy,
    find_sync,
    noise_path_gain,
    sigma_for_snr,
)
from .rng import Stream, stream_rng
from .signals import PamConstellation, SymbolSequence, convolve_same, generate_symbols

#: KP4 (RS(544,514)) pre-FEC threshold, quoted as a bit error rate.
KP4_BER = 2.4e-4
#: Gray-mapped 4-PAM carries 2 bits/symbol, so SER ~= 2 * BER at low error rates.
KP4_SER = 2.0 * KP4_BER

DEFAULT_PILOT_SYMBOLS = 10_000
DEFAULT_EVAL_CHUNK = 100_000


def q_function(x: np.ndarray | float) -> np.ndarray | float:
    return 0.5 * erfc(np.asarray(x) / np.sqrt(2.0))


def theory_ser_4pam(snr_db: np.ndarray | float) -> np.ndarray | float:
    """Closed-form 4-PAM AWGN symbol error rate as a function of SNR in dB."""
    snr = 10.0 ** (np.asarray(snr_db, dtype=np.float64) / 10.0)
    out = 1.5 * q_function(np.sqrt(0.4 * snr))
    return float(out) if np.isscalar(snr_db) else out


def theory_snr_at_ser(target_ser: float) -> float:
    """Inverse of the theory curve (dB), solved by bisection."""
    lo, hi = -10.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if theory_ser_4pam(mid) > target_ser:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# decisions


@dataclass(frozen=True)
class DecisionModel:
    """Per-level conditional means and pooled variance from a labelled pilot."""

    means: np.ndarray  # indexed by alphabet index
    variance: float
    pilot_len: int

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.means) > 0))

    def decide(self, samples: np.ndarray) -> np.ndarray:
        """Nearest conditional mean == equal-variance Gaussian ML decision."""
        return np.argmin(np.abs(samples[:, None] - self.means[None, :]), axis=1)


def fit_decision_model(
    received: np.ndarray,
    transmitted: SymbolSequence,
    pilot_len: int,
) -> DecisionModel:
    order = transmitted.constellation.order
    if pilot_len < 100 * order:
        raise ValueError(f"pilot must contain at least {100 * order} symbols")
    if pilot_len > len(received):
        raise ValueError("pilot longer than the received sequence")
    pilot_rx = received[:pilot_len]
    pilot_idx = transmitted.indices[:pilot_len]
    means = np.empty(order)
    sq_sum = 0.0
    for level in range(order):
        mask = pilot_idx == level
        if not np.any(mask):
            raise EstimationError(f"level {level} absent from the pilot segment")
        means[level] = pilot_rx[mask].mean()
        sq_sum += float(np.sum((pilot_rx[mask] - means[level]) ** 2))
    variance = sq_sum / pilot_len
    if variance <= 0:
        variance = np.finfo(np.float64).tiny
    return DecisionModel(means=means, variance=variance, pilot_len=pilot_len)


@dataclass(frozen=True)
class SerEstimate:
    errors: int
    count: int
    low_count_warning: bool

    @property
    def ser(self) -> float:
        return self.errors / self.count if self.count else float("nan")


def measure_ser(
    received: np.ndarray,
    transmitted: SymbolSequence,
    model: DecisionModel,
) -> SerEstimate:
    """Count symbol errors beyond the pilot segment that trained the model."""
    start = model.pilot_len
    decided = model.decide(received[start:])
    truth = transmitted.indices[start : start + len(decided)]
    errors = int(np.count_nonzero(decided != truth))
    count = len(truth)
    return SerEstimate(errors=errors, count=count, low_count_warning=count < 10_000)


def measure_ber_gray(
    received: np.ndarray,
    transmitted: SymbolSequence,
    model: DecisionModel,
) -> float:
    """Bit error rate under the constellation's Gray labelling."""
    start = model.pilot_len
    decided = model.decide(received[start:])
    truth = transmitted.indices[start : start + len(decided)]
    labels = transmitted.constellation.bit_map
    diff = labels[decided] ^ labels[truth]
    nbits = transmitted.constellation.bits_per_symbol
    bit_errors = sum(int(np.count_nonzero(diff & (1 << b))) for b in range(nbits))
    return bit_errors / (len(truth) * nbits)


# ---------------------------------------------------------------------------
# Nyquist folded-spectrum diagnostic


@dataclass(frozen=True)
class FoldedSpectrum:
    """Aliased system response B(f) = sum_m H(f + m/T) over the symbol-rate band."""

    freqs_hz: np.ndarray  # [-1/(2T), 1/(2T)), fftshifted order
    values: np.ndarray  # complex B(f)
    source: str = ""

    @property
    def mag_db(self) -> np.ndarray:
        mag = np.abs(self.values)
        center = mag[len(mag) // 2]
        return 20.0 * np.log10(mag / center)


def folded_spectrum(response: np.ndarray, sps: int, sample_rate: float, source: str = "") -> FoldedSpectrum:
    """Fold the DFT of a composed impulse response onto the symbol-rate band."""
    n = len(response)
    if n % sps:
        raise ValueError("response length must be divisible by sps")
    h = np.fft.fft(response)
    m = n // sps
    folded = h.reshape(sps, m).sum(axis=0)
    baud = sample_rate / sps
    freqs = np.fft.fftshift(np.fft.fftfreq(m, d=1.0 / baud))
    return FoldedSpectrum(freqs_hz=freqs, values=np.fft.fftshift(folded), source=source)


def ripple_db(spectrum: FoldedSpectrum, edge_exclude: float = 0.02) -> float:
    """Max-minus-min of |B| in dB, excluding the outermost `edge_exclude` of bins."""
    mag = spectrum.mag_db
    drop = int(np.ceil(len(mag) * edge_exclude / 2))
    core = mag[drop : len(mag) - drop] if drop else mag
    return float(core.max() - core.min())


def b2b_electrical_response(
    link: LinkSimulator,
    ps_taps: np.ndarray,
    rx_taps: np.ndarray,
    n_symbols: int = 1024,
) -> np.ndarray:
    """Impulse response of pulse shaper + DAC + ADC + receiver filter (no fibre)."""
    sps = link.cfg.spec.sps
    n = n_symbols * sps
    h = np.zeros(n)
    h[n // 2] = 1.0
    h = convolve_same(h, ps_taps)
    spectrum = np.fft.rfft(h)
    if link.dac is not None:
        spectrum = spectrum * link.dac.rfft_response(n)
    if link.adc is not None:
        spectrum = spectrum * link.adc.rfft_response(n)
    h = np.fft.irfft(spectrum, n=n)
    return convolve_same(h, rx_taps)


# ---------------------------------------------------------------------------
# eye diagnostics


@dataclass(frozen=True)
class EyeHistogram:
    """2-D sample density over (intra-2-symbol phase, amplitude bin)."""

    counts: np.ndarray  # shape (phases, amp_bins)
    amp_edges: np.ndarray
    span_samples: int


def eye_histogram(waveform: np.ndarray, sps: int, amp_bins: int = 128, span_symbols: int = 2) -> EyeHistogram:
    span = span_symbols * sps
    lo, hi = float(waveform.min()), float(waveform.max())
    if lo == hi:  # constant waveform still deserves a well-formed histogram
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, amp_bins + 1)
    phases = np.arange(len(waveform)) % span
    bins = np.clip(np.digitize(waveform, edges) - 1, 0, amp_bins - 1)
    counts = np.zeros((span, amp_bins), dtype=np.int64)
    np.add.at(counts, (phases, bins), 1)
    return EyeHistogram(counts=counts, amp_edges=edges, span_samples=span)


def eye_opening(
    waveform: np.ndarray,
    transmitted: SymbolSequence,
    sync: SyncInfo,
    decile: float = 0.10,
) -> tuple[float, int]:
    """Worst adjacent-level decile gap at the best sampling phase.

    For each intra-symbol phase, samples are grouped by transmitted level and
    the gap between the lower decile of each level and the upper decile of the
    level below is computed; the opening is the minimum gap, maximised over
    phases.  Positive means an open eye.
    """
    sps = sync.sps
    order = transmitted.constellation.order
    n_sym = len(transmitted)
    best = -np.inf
    best_phase = 0
    for phase in range(sps):
        probe_sync = SyncInfo(lag=sync.shift * sps + phase, sps=sps)
        samples = aligned_symbols(waveform, probe_sync, n_sym)
        k0 = max(0, -probe_sync.shift)
        labels = transmitted.indices[k0 : k0 + len(samples)]
        gaps = []
        for level in range(order - 1):
            lower = samples[labels == level]
            upper = samples[labels == level + 1]
            if len(lower) == 0 or len(upper) == 0:
                gaps.append(-np.inf)
                continue
            gaps.append(
                float(np.quantile(upper, decile) - np.quantile(lower, 1.0 - decile))
            )
        opening = min(gaps)
        if opening > best:
            best = opening
            best_phase = phase
    return best, best_phase


# ---------------------------------------------------------------------------
# point evaluation and sweeps


@dataclass
class PointEvaluation:
    estimate: SerEstimate
    ber_gray: float
    p_rec_dbm: float
    sigma: float
    model: DecisionModel
    sync: SyncInfo
    waveform: np.ndarray | None = None  # first-chunk rx waveform, kept on request
    waveform_symbols: SymbolSequence | None = None


def evaluate_ser(
    link: LinkSimulator,
    ps_taps: np.ndarray,
    rx_taps: np.ndarray,
    n_symbols: int,
    seed: int,
    snr_db: float | None = None,
    sigma: float | None = None,
    pilot_len: int = DEFAULT_PILOT_SYMBOLS,
    chunk_symbols: int = DEFAULT_EVAL_CHUNK,
    symbol_stream: int = Stream.EVAL_SYMBOLS,
    noise_stream: int = Stream.EVAL_NOISE,
    keep_waveform: bool = False,
) -> PointEvaluation:
    """Monte-Carlo SER of a frozen filter pair on a fresh symbol stream.

    Exactly one of `snr_db` (noise calibrated against the current chain) or
    `sigma` (fixed absolute noise) must be given.  Streams are chunked so
    arbitrarily long evaluations stay within memory.
    """
    if (snr_db is None) == (sigma is None):
        raise ValueError("specify exactly one of snr_db or sigma")
    cfg = link.cfg
    sps = cfg.spec.sps
    pilot_len = min(pilot_len, max(400, n_symbols // 4))

    probe = generate_symbols(2048, seed=stream_rng(seed, Stream.SYNC_PROBE, 1))
    probe_out = link.simulate(ps_taps, rx_taps, probe.amplitudes)
    sync = find_sync(probe_out.rx_waveform, probe.amplitudes, sps, max_lag_symbols=max(len(ps_taps), len(rx_taps)))

    if snr_db is not None:
        calib = generate_symbols(8192, seed=stream_rng(seed, Stream.CALIBRATION, 1))
        es = decision_symbol_energy(link, ps_taps, rx_taps, calib.amplitudes)
        sigma = sigma_for_snr(es, noise_path_gain(link, rx_taps), snr_db)

    sym_rng = stream_rng(seed, symbol_stream)
    noise_rng = stream_rng(seed, noise_stream)

    model: DecisionModel | None = None
    errors = 0
    count = 0
    bit_errors = 0.0
    p_rec_dbm = float("nan")
    kept_waveform: np.ndarray | None = None
    kept_symbols: SymbolSequence | None = None
    remaining = n_symbols
    first = True
    while remaining > 0:
        this = min(chunk_symbols, remaining)
        remaining -= this
        syms = generate_symbols(this, seed=sym_rng)
        out = link.simulate(ps_taps, rx_taps, syms.amplitudes, sigma=sigma, noise_rng=noise_rng)
        received = aligned_symbols(out.rx_waveform, sync, this)
        truth_amp = aligned_target(syms.amplitudes, sync, this, len(out.rx_waveform))
        k0 = max(0, -sync.shift)
        truth = SymbolSequence(
            indices=syms.indices[k0 : k0 + len(truth_amp)],
            amplitudes=truth_amp,
            constellation=syms.constellation,
        )
        if first:
            p_rec_dbm = 10.0 * np.log10(out.p_rec_w / 1e-3)
            model = fit_decision_model(received, truth, pilot_len)
            if keep_waveform:
                kept_waveform = out.rx_waveform
                kept_symbols = syms
            first = False
            est = measure_ser(received, truth, model)
            ber = measure_ber_gray(received, truth, model)
            bit_errors += ber * est.count
        else:
            decided = model.decide(received)
            est_errors = int(np.count_nonzero(decided != truth.indices))
            est = SerEstimate(errors=est_errors, count=len(truth.indices), low_count_warning=False)
            labels = truth.constellation.bit_map
            diff = labels[decided] ^ labels[truth.indices]
            nbits = truth.constellation.bits_per_symbol
            bit_errors += sum(int(np.count_nonzero(diff & (1 << b))) for b in range(nbits)) / nbits
        errors += est.errors
        count += est.count

    return PointEvaluation(
        estimate=SerEstimate(errors=errors, count=count, low_count_warning=count < 10_000),
        ber_gray=bit_errors / count if count else float("nan"),
        p_rec_dbm=p_rec_dbm,
        sigma=float(sigma),
        model=model,
        sync=sync,
        waveform=kept_waveform,
        waveform_symbols=kept_symbols,
    )


@dataclass
class SeedPoint:
    seed: int
    ser: float
    errors: int
    count: int
    low_count_warning: bool
    p_rec_dbm: float


@dataclass
class SweepPoint:
    """One sweep abscissa (SNR in dB or launch power in dBm) across seeds."""

    x: float
    per_seed: list[SeedPoint] = field(default_factory=list)
    theory_ser: float | None = None

    @property
    def mean_ser(self) -> float:
        return float(np.mean([s.ser for s in self.per_seed]))

    @property
    def std_ser(self) -> float:
        return float(np.std([s.ser for s in self.per_seed]))

    @property
    def mean_p_rec_dbm(self) -> float:
        return float(np.mean([s.p_rec_dbm for s in self.per_seed]))


def sweep_snr_b2b(
    link: LinkSimulator,
    ps_taps: np.ndarray,
    rx_taps: np.ndarray,
    snr_grid_db: list[float],
    seeds: list[int],
    n_symbols: int,
    pilot_len: int = DEFAULT_PILOT_SYMBOLS,
) -> list[SweepPoint]:
    """SER of one frozen filter pair over an SNR grid, repeated per seed."""
    points = []
    for snr_db in snr_grid_db:
        point = SweepPoint(x=float(snr_db), theory_ser=float(theory_ser_4pam(snr_db)))
        for seed in seeds:
            ev = evaluate_ser(
                link, ps_taps, rx_taps, n_symbols=n_symbols, seed=seed, snr_db=snr_db, pilot_len=pilot_len
            )
            point.per_seed.append(
                SeedPoint(
                    seed=seed,
                    ser=ev.estimate.ser,
                    errors=ev.estimate.errors,
                    count=ev.estimate.count,
                    low_count_warning=ev.estimate.low_count_warning,
                    p_rec_dbm=ev.p_rec_dbm,
                )
            )
        points.append(point)
    return points


def snr_gap_to_theory_db(points: list[SweepPoint], target_ser: float) -> float:
    """Horizontal distance (dB) between the measured SER curve and theory at target_ser.

    The measured curve is interpolated linearly in (SNR, log10 SER); the gap is
    positive when the system needs more SNR than theory.  A curve that floors
    above the target (never reaches it on the grid) has an infinite gap.
    """
    xs = np.array([p.x for p in points])
    sers = np.array([max(p.mean_ser, 1e-12) for p in points])
    order = np.argsort(xs)
    xs, sers = xs[order], sers[order]
    log_target = np.log10(target_ser)
    log_ser = np.log10(sers)
    crossing = None
    for i in range(len(xs) - 1):
        lo, hi = log_ser[i], log_ser[i + 1]
        if (lo - log_target) * (hi - log_target) <= 0 and lo != hi:
            frac = (log_target - lo) / (hi - lo)
            crossing = xs[i] + frac * (xs[i + 1] - xs[i])
            break
    if crossing is None:
        if np.all(sers > target_ser):
            return float("inf")
        raise ValueError(f"measured SER curve never crosses {target_ser:g}")
    return float(crossing - theory_snr_at_ser(target_ser))
