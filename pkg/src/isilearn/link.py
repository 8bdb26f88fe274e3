"""Composition of the full IM/DD chain and its operating-point utilities.

The chain is: upsampled symbols -> pulse shaper -> DAC Bessel -> intensity
modulator -> fibre -> photodiode -> additive receiver noise -> ADC Bessel ->
receiver AGC (DC removal + unit-variance scaling) -> receiver FIR.

Each batch is processed with a zero guard prefix/suffix that is discarded
after the full chain, which bounds the circular-convolution edge effects of
the FFT-domain blocks.  `LinkSimulator.simulate` is a plain (tape-free)
straight-line evaluation; the recorded, differentiable twin lives in
`diffchain` and is cross-checked against this one in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import (
    BesselLpf,
    FiberParams,
    ModulatorParams,
    NoiseParams,
    add_noise,
    bessel_apply,
    fiber_propagate,
    modulate,
    photodiode,
)
from .errors import CalibrationError
from .signals import SampledSignal, SignalSpec, convolve_same, design_rrc

#: taps of the long RRC prototype used as the canonical matched filter for
#: SNR bookkeeping (and as the "ideal" filter pair in oracle configurations).
CANONICAL_RRC_TAPS = 257


@dataclass(frozen=True)
class LinkConfig:
    """Full physical parameterisation of one link instance."""

    spec: SignalSpec = SignalSpec()
    modulator: ModulatorParams = ModulatorParams()
    fiber: FiberParams = FiberParams(length_m=0.0)
    noise: NoiseParams = NoiseParams(target_snr_db=12.0)
    dac_cutoff_hz: float | None = 45e9
    adc_cutoff_hz: float | None = 45e9
    bessel_order: int = 5
    guard_len: int = 256
    rolloff: float = 0.01

    def __post_init__(self) -> None:
        if self.guard_len < 0:
            raise ValueError("guard_len must be >= 0")

    @property
    def is_b2b(self) -> bool:
        return self.fiber.length_m == 0.0


@dataclass(frozen=True)
class SyncInfo:
    """Integer alignment between transmitted symbols and the receive waveform.

    `lag` is the best cross-correlation lag in samples; `phase` and `shift`
    are its intra-symbol and whole-symbol parts.
    """

    lag: int
    sps: int

    @property
    def phase(self) -> int:
        return self.lag % self.sps

    @property
    def shift(self) -> int:
        return self.lag // self.sps


@dataclass
class LinkOutput:
    """Receiver-filter output (guards removed) plus link telemetry."""

    rx_waveform: np.ndarray  # length n_symbols * sps, after AGC and rx filter
    p_rec_w: float  # mean optical power at the photodiode input
    p_tx_w: float  # mean optical power at the modulator output
    drive_peak: float  # peak magnitude of the electrical drive before normalisation


def standardize(y: np.ndarray, interior: slice) -> np.ndarray:
    """Remove DC and scale to unit variance, with statistics from the interior only."""
    core = y[interior]
    mu = core.mean()
    sd = np.sqrt(np.mean((core - mu) ** 2))
    return (y - mu) / sd


class LinkSimulator:
    """Stateless forward evaluation of a configured link."""

    def __init__(self, cfg: LinkConfig):
        self.cfg = cfg
        fs = cfg.spec.sample_rate
        self.dac = (
            BesselLpf(cfg.dac_cutoff_hz, fs, cfg.bessel_order) if cfg.dac_cutoff_hz else None
        )
        self.adc = (
            BesselLpf(cfg.adc_cutoff_hz, fs, cfg.bessel_order) if cfg.adc_cutoff_hz else None
        )

    # -- batch layout -------------------------------------------------------

    def padded_upsample(self, amplitudes: np.ndarray) -> np.ndarray:
        g, sps = self.cfg.guard_len, self.cfg.spec.sps
        out = np.zeros(2 * g + len(amplitudes) * sps, dtype=np.float64)
        out[g : g + len(amplitudes) * sps : sps] = amplitudes
        return out

    def interior(self, padded_len: int) -> slice:
        g = self.cfg.guard_len
        return slice(g, padded_len - g) if g else slice(0, padded_len)

    # -- chain stages -------------------------------------------------------

    def photocurrent(self, ps_taps: np.ndarray, amplitudes: np.ndarray) -> SampledSignal:
        """Noiseless chain from symbols to the photodiode output (still padded)."""
        spec = self.cfg.spec
        x = SampledSignal(self.padded_upsample(amplitudes), spec, "electrical")
        x = SampledSignal(convolve_same(x.samples, ps_taps), spec, "electrical")
        if self.dac is not None:
            x = bessel_apply(x, self.dac)
        field = modulate(x, self.cfg.modulator)
        if not self.cfg.is_b2b:
            field = fiber_propagate(field, self.cfg.fiber)
        return photodiode(field)

    def simulate(
        self,
        ps_taps: np.ndarray,
        rx_taps: np.ndarray,
        amplitudes: np.ndarray,
        sigma: float = 0.0,
        noise_rng: np.random.Generator | None = None,
        noise_vector: np.ndarray | None = None,
    ) -> LinkOutput:
        spec = self.cfg.spec
        x = SampledSignal(self.padded_upsample(amplitudes), spec, "electrical")
        x = SampledSignal(convolve_same(x.samples, ps_taps), spec, "electrical")
        if self.dac is not None:
            x = bessel_apply(x, self.dac)
        drive_peak = float(np.max(np.abs(x.samples)))
        field = modulate(x, self.cfg.modulator)
        p_tx = float(np.mean(np.abs(field.samples[self.interior(len(field))]) ** 2))
        if not self.cfg.is_b2b:
            field = fiber_propagate(field, self.cfg.fiber)
        p_rec = float(np.mean(np.abs(field.samples[self.interior(len(field))]) ** 2))
        y = photodiode(field)
        if noise_vector is not None:
            y = SampledSignal(y.samples + noise_vector, y.spec, y.domain)
        elif sigma > 0:
            if noise_rng is None:
                raise ValueError("noise_rng is required when sigma > 0")
            y = add_noise(y, sigma, noise_rng)
        if self.adc is not None:
            y = bessel_apply(y, self.adc)
        ynorm = standardize(y.samples, self.interior(len(y)))
        r = convolve_same(ynorm, rx_taps)
        return LinkOutput(
            rx_waveform=r[self.interior(len(r))],
            p_rec_w=p_rec,
            p_tx_w=p_tx,
            drive_peak=drive_peak,
        )


def find_sync(
    waveform: np.ndarray,
    amplitudes: np.ndarray,
    sps: int,
    max_lag_symbols: int,
) -> SyncInfo:
    """Best integer sample lag between the receive waveform and the symbol train.

    Maximises the plain (sign-preserving) cross-correlation of the DC-free
    waveform with the upsampled amplitudes over lags within the given window.
    """
    ref = np.zeros(len(amplitudes) * sps)
    ref[::sps] = amplitudes
    w = waveform - waveform.mean()
    max_lag = max(1, max_lag_symbols) * sps
    lags = np.arange(-max_lag, max_lag + 1)
    corr = np.empty(len(lags))
    n = min(len(w), len(ref))
    for i, d in enumerate(lags):
        if d >= 0:
            length = n - d
            corr[i] = np.dot(w[d : d + length], ref[:length])
        else:
            length = n + d
            corr[i] = np.dot(w[:length], ref[-d : -d + length])
    return SyncInfo(lag=int(lags[np.argmax(corr)]), sps=sps)


def aligned_symbols(waveform: np.ndarray, sync: SyncInfo, n_symbols: int) -> np.ndarray:
    """Decision-point samples for symbols 0..n_valid-1 under the given alignment.

    Symbol k is read at sample phase + (k + shift)*sps; symbols whose sample
    falls outside the waveform are dropped (at most |shift| of them).
    """
    sps, phase, shift = sync.sps, sync.phase, sync.shift
    k0 = max(0, -shift)
    k1 = min(n_symbols, (len(waveform) - phase - 1) // sps - shift + 1)
    if k1 <= k0:
        raise ValueError("alignment leaves no overlapping symbols")
    idx = phase + (np.arange(k0, k1) + shift) * sps
    return waveform[idx]


def aligned_target(amplitudes: np.ndarray, sync: SyncInfo, n_symbols: int, waveform_len: int) -> np.ndarray:
    """Transmitted amplitudes matching `aligned_symbols` element for element."""
    sps, phase, shift = sync.sps, sync.phase, sync.shift
    k0 = max(0, -shift)
    k1 = min(n_symbols, (waveform_len - phase - 1) // sps - shift + 1)
    return amplitudes[k0:k1]


def decision_symbol_energy(
    link: LinkSimulator,
    ps_taps: np.ndarray,
    rx_taps: np.ndarray,
    amplitudes: np.ndarray,
) -> float:
    """Mean-removed symbol energy at the decision point of the noiseless chain.

    Measured before the receiver AGC so it shares a frame with
    `noise_path_gain`; the AGC is affine and cancels from the SNR ratio.
    """
    cfg = link.cfg
    y = link.photocurrent(ps_taps, amplitudes)
    if link.adc is not None:
        y = bessel_apply(y, link.adc)
    z = convolve_same(y.samples, rx_taps)
    z = z[link.interior(len(z))]
    sync = find_sync(z, amplitudes, cfg.spec.sps, max_lag_symbols=max(len(ps_taps), len(rx_taps)))
    d = aligned_symbols(z, sync, len(amplitudes))
    es = float(np.mean((d - d.mean()) ** 2))
    if es <= 0:
        raise CalibrationError("zero signal energy at the decision point")
    return es


def noise_path_gain(link: LinkSimulator, rx_taps: np.ndarray, grid_len: int = 4096) -> float:
    """Variance gain of unit white noise from the injection point to the decision point.

    The noise path is ADC Bessel followed by the receiver filter; the gain is
    the energy of the composed impulse response (downsampling does not change
    a per-sample variance).
    """
    h = np.zeros(grid_len)
    h[grid_len // 2] = 1.0
    if link.adc is not None:
        h = np.fft.irfft(np.fft.rfft(h) * link.adc.rfft_response(grid_len), n=grid_len)
    h = convolve_same(h, rx_taps)
    return float(np.dot(h, h))


def sigma_for_snr(es: float, kappa2: float, target_snr_db: float) -> float:
    """Injected per-sample noise sigma realising the target decision-point SNR.

    SNR is defined as Es / (2 sigma_d^2) with sigma_d^2 = kappa2 * sigma^2 the
    noise variance at the decision point, so the 4-PAM theory curve
    1.5*Q(sqrt(0.4*SNR)) is exact whenever the chain is free of ISI.
    """
    if es <= 0:
        raise CalibrationError("zero signal energy at the decision point")
    return float(np.sqrt(es / (2.0 * kappa2 * 10.0 ** (target_snr_db / 10.0))))


def snr_from_sigma(es: float, kappa2: float, sigma: float) -> float:
    """Inverse of `sigma_for_snr`, in dB."""
    return float(10.0 * np.log10(es / (2.0 * kappa2 * sigma**2)))


def calibrate_snr(
    link: LinkSimulator,
    ps_taps: np.ndarray,
    rx_taps: np.ndarray,
    target_snr_db: float,
    amplitudes: np.ndarray,
) -> float:
    """Noise sigma that puts the noiseless reference chain (current filters) at the target SNR."""
    es = decision_symbol_energy(link, ps_taps, rx_taps, amplitudes)
    return sigma_for_snr(es, noise_path_gain(link, rx_taps), target_snr_db)
