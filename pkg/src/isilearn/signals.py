"""Symbol and waveform primitives: PAM alphabets, rate conversion, FIR filtering, RRC design."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.signal import fftconvolve

Domain = Literal["electrical", "optical-field", "photocurrent"]

# Direct convolution wins for short learned filters; FFT for long prototypes.
_DIRECT_CONV_MAX_TAPS = 64


@dataclass(frozen=True, slots=True)
class SignalSpec:
    """Sampling contract: symbol rate and integer oversampling factor."""

    baud_rate: float = 100e9
    sps: int = 4

    def __post_init__(self) -> None:
        if self.baud_rate <= 0:
            raise ValueError("baud_rate must be positive")
        if int(self.sps) != self.sps or self.sps < 1:
            raise ValueError("sps must be an integer >= 1")

    @property
    def sample_rate(self) -> float:
        return self.baud_rate * self.sps

    @property
    def symbol_period(self) -> float:
        return 1.0 / self.baud_rate


@dataclass(frozen=True)
class PamConstellation:
    """Equally spaced, zero-mean, unit-average-energy PAM alphabet with Gray labels."""

    order: int
    levels: np.ndarray
    bit_map: np.ndarray  # Gray label of each level, lowest level first

    @classmethod
    def unit_energy(cls, order: int = 4) -> "PamConstellation":
        if order < 2 or order % 2:
            raise ValueError("order must be an even integer >= 2")
        raw = np.arange(-(order - 1), order, 2, dtype=np.float64)
        levels = raw / np.sqrt(np.mean(raw**2))
        idx = np.arange(order)
        return cls(order=order, levels=levels, bit_map=idx ^ (idx >> 1))

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))

    @property
    def scale(self) -> float:
        """RMS of the alphabet (1.0 for unit-energy constellations)."""
        return float(np.sqrt(np.mean(self.levels**2)))


@dataclass(frozen=True)
class SymbolSequence:
    """Indices into a PAM alphabet together with their mapped amplitudes."""

    indices: np.ndarray
    amplitudes: np.ndarray
    constellation: PamConstellation

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class SampledSignal:
    """Waveform samples with an explicit sampling contract and physical domain tag.

    Domain transitions are owned by the link blocks: only the modulator turns
    `electrical` into `optical-field` and only the photodiode turns
    `optical-field` into `photocurrent`.
    """

    samples: np.ndarray
    spec: SignalSpec
    domain: Domain = "electrical"

    def __post_init__(self) -> None:
        if self.samples.ndim != 1 or len(self.samples) == 0:
            raise ValueError("samples must be a non-empty 1-D array")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class FirFilter:
    """A real FIR tap vector; the two learnable objects of the link live here."""

    taps: np.ndarray
    learnable: bool = False

    def __post_init__(self) -> None:
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 1 or len(self.taps) == 0:
            raise ValueError("taps must be a non-empty 1-D real vector")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("taps must be finite")

    def __len__(self) -> int:
        return len(self.taps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.taps))

    def normalized(self) -> "FirFilter":
        return FirFilter(self.taps / self.norm, learnable=self.learnable)


def generate_symbols(
    count: int,
    order: int = 4,
    seed: int | np.random.Generator = 0,
) -> SymbolSequence:
    """Draw i.i.d. uniform PAM symbols from a deterministic counter-based stream."""
    if count < 1:
        raise ValueError("count must be >= 1")
    constellation = PamConstellation.unit_energy(order)
    if isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    indices = rng.integers(0, order, size=count, dtype=np.int64)
    return SymbolSequence(
        indices=indices,
        amplitudes=constellation.levels[indices],
        constellation=constellation,
    )


def upsample(x: SymbolSequence, sps: int, baud_rate: float = 100e9) -> SampledSignal:
    """Zero-insertion upsampling: one amplitude every `sps` samples, zeros between."""
    if sps < 1:
        raise ValueError("sps must be >= 1")
    out = np.zeros(len(x) * sps, dtype=np.float64)
    out[::sps] = x.amplitudes
    return SampledSignal(out, SignalSpec(baud_rate=baud_rate, sps=sps), "electrical")


def downsample(x: SampledSignal | np.ndarray, sps: int, phase: int = 0) -> np.ndarray:
    """Symbol-rate samples at a fixed intra-symbol phase: out[k] = x[k*sps + phase]."""
    if not 0 <= phase < sps:
        raise ValueError(f"phase must satisfy 0 <= phase < sps, got {phase}")
    samples = x.samples if isinstance(x, SampledSignal) else np.asarray(x)
    return samples[phase::sps].copy()


def convolve_same(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Linear convolution trimmed to len(x), centred on the tap group delay (N-1)/2."""
    n, m = len(x), len(taps)
    if m > n:
        raise ValueError(f"filter length {m} exceeds signal length {n}")
    if m <= _DIRECT_CONV_MAX_TAPS:
        full = np.convolve(x, taps)
    else:
        full = fftconvolve(x, taps)
    start = (m - 1) // 2
    return full[start : start + n]


def fir_convolve(x: SampledSignal, f: FirFilter, mode: str = "same") -> SampledSignal:
    if mode != "same":
        raise ValueError("only 'same' mode convolution is supported")
    return SampledSignal(convolve_same(x.samples, f.taps), x.spec, x.domain)


def rrc_impulse(times: np.ndarray, rolloff: float) -> np.ndarray:
    """Closed-form root-raised-cosine impulse response at `times` (in symbol periods).

    Singular points (t = 0 and |t| = 1/(4*rolloff)) are filled with their
    analytic limits so the response is exact on any grid.
    """
    if not 0 < rolloff <= 1:
        raise ValueError("rolloff must lie in (0, 1]")
    t = np.asarray(times, dtype=np.float64)
    a = rolloff
    out = np.empty_like(t)

    at_zero = t == 0.0
    at_break = np.isclose(np.abs(4.0 * a * t), 1.0, rtol=1e-12, atol=1e-12)
    regular = ~(at_zero | at_break)

    out[at_zero] = 1.0 - a + 4.0 * a / np.pi
    out[at_break] = (a / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * a))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * a))
    )
    tr = t[regular]
    num = np.sin(np.pi * tr * (1.0 - a)) + 4.0 * a * tr * np.cos(np.pi * tr * (1.0 + a))
    den = np.pi * tr * (1.0 - (4.0 * a * tr) ** 2)
    out[regular] = num / den
    return out


def design_rrc(num_taps: int, sps: int, rolloff: float) -> FirFilter:
    """Root-raised-cosine FIR prototype, centred and scaled to unit L2 norm."""
    if num_taps < 3:
        raise ValueError("num_taps must be >= 3")
    if rolloff == 0:
        raise ValueError("rolloff must be > 0 (the design is singular at 0)")
    k = np.arange(num_taps, dtype=np.float64)
    times = (k - (num_taps - 1) / 2.0) / sps
    taps = rrc_impulse(times, rolloff)
    return FirFilter(taps / np.linalg.norm(taps))
