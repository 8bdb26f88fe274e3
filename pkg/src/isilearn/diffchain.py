"""Recorded (differentiable) evaluation of the link and its MSE training loss.

`forward` mirrors `LinkSimulator.simulate` step for step but routes every
operation through the adjoint tape, so `Tape.backward` yields exact gradients
of the batch MSE with respect to both tap vectors.  `reference_loss` is a
deliberately tape-free straight-line recomputation used to cross-check the
recorded forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tape, Var
from .link import LinkSimulator, SyncInfo, aligned_target, standardize
from .signals import convolve_same


@dataclass(frozen=True)
class ChainParams:
    """The two trainable objects of the link."""

    pulse_shaper: Parameter
    rx_filter: Parameter


@dataclass
class TrainBatch:
    """One optimisation batch: symbols, a frozen noise realisation, alignment."""

    amplitudes: np.ndarray
    noise: np.ndarray | None  # padded-length vector, or None for a noiseless pass
    sync: SyncInfo
    constellation_scale: float = 1.0


def forward(link: LinkSimulator, params: ChainParams, batch: TrainBatch) -> tuple[float, Tape, Var]:
    """Run the chain on a batch and record it; returns (loss, tape, loss_var)."""
    cfg = link.cfg
    sps = cfg.spec.sps
    amplitudes = batch.amplitudes
    n_sym = len(amplitudes)

    tape = Tape()
    x = tape.constant(link.padded_upsample(amplitudes))
    interior = link.interior(len(x.data))

    ps = tape.parameter(params.pulse_shaper)
    rxf = tape.parameter(params.rx_filter)

    x = tape.conv_same(x, ps)
    if link.dac is not None:
        x = tape.fft_filter_real(x, link.dac.rfft_response(len(x.data)))

    # intensity modulator: unit-peak drive, clipped power, square-root field
    xhat = tape.peak_normalize(x)
    power = tape.affine(xhat, cfg.modulator.mod_index, cfg.modulator.bias)
    power = tape.relu(power)
    power = tape.affine(power, cfg.modulator.p_in_w)
    field = tape.sqrt(power)

    if not cfg.is_b2b:
        field = tape.to_complex(field)
        freqs = np.fft.fftfreq(len(field.data), d=1.0 / cfg.spec.sample_rate)
        field = tape.fft_filter_complex(field, cfg.fiber.frequency_response(freqs))

    y = tape.square_mag(field)
    if batch.noise is not None:
        y = tape.add_vector(y, batch.noise)
    if link.adc is not None:
        y = tape.fft_filter_real(y, link.adc.rfft_response(len(y.data)))

    y = tape.standardize(y, interior)
    r = tape.conv_same(y, rxf)
    r = tape.slice(r, interior.start, interior.stop)

    # symbol-rate decision samples, aligned to the transmitted sequence
    sync = batch.sync
    target = aligned_target(amplitudes, sync, n_sym, len(r.data))
    k0 = max(0, -sync.shift)
    idx = sync.phase + (np.arange(k0, k0 + len(target)) + sync.shift) * sps
    yhat = tape.gather(r, idx)
    yhat = tape.rms_rescale(yhat, batch.constellation_scale)
    loss_var = tape.mse(yhat, target)
    return float(loss_var.data), tape, loss_var


def backward(tape: Tape, loss_var: Var) -> None:
    """Propagate d(loss) back through the recorded chain into the Parameters."""
    tape.backward(loss_var)


def reference_loss(link: LinkSimulator, params: ChainParams, batch: TrainBatch) -> float:
    """Tape-free duplicate of `forward` for cross-checking the recorded pass."""
    out = link.simulate(
        params.pulse_shaper.values,
        params.rx_filter.values,
        batch.amplitudes,
        noise_vector=batch.noise,
    )
    sync = batch.sync
    target = aligned_target(batch.amplitudes, sync, len(batch.amplitudes), len(out.rx_waveform))
    k0 = max(0, -sync.shift)
    idx = sync.phase + (np.arange(k0, k0 + len(target)) + sync.shift) * link.cfg.spec.sps
    yhat = out.rx_waveform[idx]
    yhat = yhat * (batch.constellation_scale / np.sqrt(np.mean(yhat**2)))
    return float(np.mean((yhat - target) ** 2))
