"""Physical models between the two learnable filters.

DAC/ADC bandwidth limits are modelled by the exact analog 5th-order Bessel
response evaluated on the signal's FFT grid (no bilinear warping), the fibre
by its all-pass chromatic-dispersion transfer function, the modulator as an
ideal intensity-linear device with clipping at zero power, and the photodiode
as a unit-responsivity square-law detector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.signal import bessel as bessel_design

from .errors import ConfigurationError
from .signals import SampledSignal

SPEED_OF_LIGHT = 299792458.0  # m/s


class BesselLpf:
    """Analog Bessel low-pass prototype pinned to one simulation sample rate.

    The complex response is evaluated directly from the magnitude-normalised
    transfer function H(s) = B(0)/B(s/w3dB'), i.e. |H| is exactly -3 dB at the
    cutoff and exactly 1 at DC.  Responses are cached per FFT length.
    """

    def __init__(self, cutoff_hz: float, sample_rate: float, order: int = 5):
        if cutoff_hz <= 0 or sample_rate <= 0:
            raise ValueError("cutoff_hz and sample_rate must be positive")
        self.order = int(order)
        self.cutoff_hz = float(cutoff_hz)
        self.sample_rate = float(sample_rate)
        b, a = bessel_design(self.order, 2 * np.pi * self.cutoff_hz, analog=True, norm="mag")
        # Force DC gain to exactly 1 (scipy is already within float rounding).
        self._b = np.asarray(b, dtype=np.float64) * (a[-1] / b[-1])
        self._a = np.asarray(a, dtype=np.float64)
        self._rfft_cache: dict[int, np.ndarray] = {}
        self._fft_cache: dict[int, np.ndarray] = {}

    def frequency_response(self, freqs_hz: np.ndarray) -> np.ndarray:
        s = 1j * 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64)
        return npoly.polyval(s, self._b[::-1]) / npoly.polyval(s, self._a[::-1])

    def rfft_response(self, n: int) -> np.ndarray:
        """Response on the length-n real-FFT grid (Nyquist bin forced real)."""
        h = self._rfft_cache.get(n)
        if h is None:
            freqs = np.fft.rfftfreq(n, d=1.0 / self.sample_rate)
            h = self.frequency_response(freqs)
            if n % 2 == 0:
                h[-1] = h[-1].real
            self._rfft_cache[n] = h
        return h

    def fft_response(self, n: int) -> np.ndarray:
        """Hermitian-symmetric response on the full length-n FFT grid."""
        h = self._fft_cache.get(n)
        if h is None:
            freqs = np.fft.fftfreq(n, d=1.0 / self.sample_rate)
            h = self.frequency_response(freqs)
            if n % 2 == 0:
                h[n // 2] = h[n // 2].real
            self._fft_cache[n] = h
        return h


def bessel_apply(x: SampledSignal, lpf: BesselLpf) -> SampledSignal:
    """Filter a real electrical/photocurrent signal with the exact analog response."""
    if x.domain == "optical-field":
        raise ConfigurationError("Bessel converters act on electrical signals, not optical fields")
    if x.spec.sample_rate != lpf.sample_rate:
        raise ConfigurationError(
            f"FFT grid mismatch: signal at {x.spec.sample_rate:g} Sa/s, "
            f"filter built for {lpf.sample_rate:g} Sa/s"
        )
    n = len(x)
    y = np.fft.irfft(np.fft.rfft(x.samples) * lpf.rfft_response(n), n=n)
    return SampledSignal(y, x.spec, x.domain)


@dataclass(frozen=True)
class FiberParams:
    """Single-mode fibre described by its dispersion-slope model.

    D(lambda) = (S0/4) * (lambda - lambda0^4 / lambda^3), beta2 = -D lambda^2/(2 pi c).
    All fields are SI; `from_engineering` accepts the usual datasheet units.
    """

    length_m: float = 2000.0
    wavelength_m: float = 1270e-9
    zero_dispersion_wavelength_m: float = 1310e-9
    dispersion_slope_s_m3: float = 92.0  # == 0.092 ps/(nm^2 km)

    @classmethod
    def from_engineering(
        cls,
        length_km: float,
        wavelength_nm: float = 1270.0,
        zero_dispersion_nm: float = 1310.0,
        slope_ps_nm2_km: float = 0.092,
    ) -> "FiberParams":
        return cls(
            length_m=length_km * 1e3,
            wavelength_m=wavelength_nm * 1e-9,
            zero_dispersion_wavelength_m=zero_dispersion_nm * 1e-9,
            dispersion_slope_s_m3=slope_ps_nm2_km * 1e3,
        )

    @property
    def dispersion_s_m2(self) -> float:
        lam, lam0 = self.wavelength_m, self.zero_dispersion_wavelength_m
        return (self.dispersion_slope_s_m3 / 4.0) * (lam - lam0**4 / lam**3)

    @property
    def dispersion_ps_nm_km(self) -> float:
        return self.dispersion_s_m2 * 1e12 * 1e-9 * 1e3

    @property
    def beta2_s2_m(self) -> float:
        lam = self.wavelength_m
        return -self.dispersion_s_m2 * lam**2 / (2 * np.pi * SPEED_OF_LIGHT)

    @property
    def beta2_ps2_km(self) -> float:
        return self.beta2_s2_m * 1e24 * 1e3

    def frequency_response(self, freqs_hz: np.ndarray) -> np.ndarray:
        omega = 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64)
        return np.exp(0.5j * self.beta2_s2_m * omega**2 * self.length_m)


def fiber_propagate(field: SampledSignal, fp: FiberParams) -> SampledSignal:
    """All-pass chromatic dispersion applied on the FFT grid; zero length is the identity."""
    if field.domain != "optical-field":
        raise ConfigurationError("fiber_propagate expects an optical-field signal")
    if fp.length_m < 0:
        raise ValueError("fibre length must be >= 0")
    if fp.length_m == 0:
        return SampledSignal(field.samples.copy(), field.spec, field.domain)
    e = np.asarray(field.samples, dtype=np.complex128)
    freqs = np.fft.fftfreq(len(e), d=1.0 / field.spec.sample_rate)
    out = np.fft.ifft(np.fft.fft(e) * fp.frequency_response(freqs))
    return SampledSignal(out, field.spec, field.domain)


@dataclass(frozen=True)
class ModulatorParams:
    """Ideal intensity-linear modulator: P(t) = p_in * max(0, bias + mod_index * xhat)."""

    p_in_w: float = 1e-3
    mod_index: float = 1.0
    bias: float = 1.0

    def __post_init__(self) -> None:
        if self.p_in_w <= 0:
            raise ValueError("p_in_w must be positive")
        if not 0 < self.mod_index <= 1:
            raise ValueError("mod_index must lie in (0, 1]")


def peak_normalize(x: np.ndarray) -> np.ndarray:
    """Scale to unit peak magnitude; an all-zero input stays zero."""
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x.copy()


def modulate(x: SampledSignal, p: ModulatorParams) -> SampledSignal:
    """Drive the modulator with the peak-normalised electrical signal.

    The instantaneous optical power is clipped at zero and the launched field
    is its (real, zero-phase) square root.
    """
    if x.domain != "electrical":
        raise ConfigurationError("modulate expects an electrical signal")
    xhat = peak_normalize(np.asarray(x.samples, dtype=np.float64))
    power = p.p_in_w * np.maximum(p.bias + p.mod_index * xhat, 0.0)
    return SampledSignal(np.sqrt(power), x.spec, "optical-field")


def photodiode(field: SampledSignal) -> SampledSignal:
    """Square-law detection with unit responsivity: y = |E|^2."""
    if field.domain != "optical-field":
        raise ConfigurationError("photodiode expects an optical-field signal")
    e = field.samples
    y = (e.real**2 + e.imag**2) if np.iscomplexobj(e) else e**2
    return SampledSignal(np.asarray(y, dtype=np.float64), field.spec, "photocurrent")


@dataclass(frozen=True)
class NoiseParams:
    """Receiver noise: either a fixed per-sample sigma or a target SNR to calibrate to."""

    sigma: float | None = None
    target_snr_db: float | None = None

    def __post_init__(self) -> None:
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.sigma is None and self.target_snr_db is None:
            raise ValueError("one of sigma or target_snr_db must be given")


def add_noise(y: SampledSignal, sigma: float, rng: np.random.Generator) -> SampledSignal:
    """Additive white Gaussian noise; sigma = 0 returns the input untouched."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return y
    w = rng.normal(0.0, sigma, size=len(y))
    return SampledSignal(y.samples + w, y.spec, y.domain)
