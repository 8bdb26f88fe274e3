"""Reverse-mode adjoint engine over a fixed set of signal-chain primitives.

The chain topology is static, so the tape is a flat list of nodes replayed in
exact reverse order.  All arithmetic is float64; complex signals are stored as
complex128 (a re/im pair) and every primitive spells out its own chain rule
under the convention grad(z) = dL/dRe(z) + 1j * dL/dIm(z).  For a
complex-linear map y = M x this gives grad_x = M^H grad_y.

Linear primitives back-propagate by applying their mathematical transpose;
|E|^2 back-propagates g -> 2 E g, sqrt back-propagates g / (2 sqrt(P)) with a
zero subgradient at the clipped boundary.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

from .errors import NumericalFaultError

_DIRECT_CONV_MAX_TAPS = 64


def _full_conv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if min(len(a), len(b)) <= _DIRECT_CONV_MAX_TAPS:
        return np.convolve(a, b)
    return fftconvolve(a, b)


class Parameter:
    """A learnable tap vector with its accumulated gradient."""

    __slots__ = ("values", "grad", "name")

    def __init__(self, values: np.ndarray, name: str = ""):
        self.values = np.array(values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("Parameter values must be 1-D")
        self.grad = np.zeros_like(self.values)
        self.name = name

    def zero_grad(self) -> None:
        self.grad[:] = 0.0


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("data", "idx")

    def __init__(self, data: np.ndarray | float, idx: int):
        self.data = data
        self.idx = idx


class _Node:
    __slots__ = ("name", "inputs", "backward", "param")

    def __init__(self, name, inputs, backward, param=None):
        self.name = name
        self.inputs = inputs  # tape indices of the inputs
        self.backward = backward  # grad_out -> tuple of grads, one per input
        self.param = param


class Tape:
    """Ordered record of forward primitives; one backward pass per forward."""

    def __init__(self, check_finite: bool = True):
        self._nodes: list[_Node] = []
        self._consumed = False
        self._check_finite = check_finite

    # -- recording ----------------------------------------------------------

    def _emit(self, name, data, inputs, backward, param=None) -> Var:
        if self._check_finite and isinstance(data, np.ndarray):
            if not np.all(np.isfinite(data)):
                raise NumericalFaultError("non-finite activation", op=name)
        elif self._check_finite and not np.isfinite(data):
            raise NumericalFaultError("non-finite activation", op=name)
        self._nodes.append(_Node(name, inputs, backward, param))
        return Var(data, len(self._nodes) - 1)

    def constant(self, data: np.ndarray) -> Var:
        return self._emit("constant", np.asarray(data), (), None)

    def parameter(self, p: Parameter) -> Var:
        return self._emit("parameter", p.values.copy(), (), None, param=p)

    # -- primitives ---------------------------------------------------------

    def conv_same(self, x: Var, taps: Var) -> Var:
        """Centre-trimmed linear convolution, differentiable in both arguments."""
        xs, h = x.data, taps.data
        n, m = len(xs), len(h)
        if m > n:
            raise ValueError("filter longer than signal")
        c = (m - 1) // 2
        y = _full_conv(xs, h)[c : c + n]

        def backward(g):
            gx = _full_conv(g, h[::-1])[m - 1 - c : m - 1 - c + n]
            gh = _full_conv(g, xs[::-1])[n - 1 - c : n - 1 - c + m]
            return gx, gh

        return self._emit("conv_same", y, (x.idx, taps.idx), backward)

    def fft_filter_real(self, x: Var, response: np.ndarray) -> Var:
        """Circular filtering of a real signal by a fixed rFFT-grid response."""
        n = len(x.data)
        y = np.fft.irfft(np.fft.rfft(x.data) * response, n=n)

        def backward(g):
            return (np.fft.irfft(np.fft.rfft(g) * np.conj(response), n=n),)

        return self._emit("fft_filter_real", y, (x.idx,), backward)

    def fft_filter_complex(self, x: Var, response: np.ndarray) -> Var:
        """Circular filtering of a complex signal by a fixed FFT-grid response."""
        y = np.fft.ifft(np.fft.fft(x.data) * response)

        def backward(g):
            return (np.fft.ifft(np.fft.fft(g) * np.conj(response)),)

        return self._emit("fft_filter_complex", y, (x.idx,), backward)

    def to_complex(self, x: Var) -> Var:
        y = x.data.astype(np.complex128)

        def backward(g):
            return (np.ascontiguousarray(g.real),)

        return self._emit("to_complex", y, (x.idx,), backward)

    def peak_normalize(self, x: Var) -> Var:
        xs = x.data
        peak = np.max(np.abs(xs))
        if peak == 0:
            return self._emit("peak_normalize", xs.copy(), (x.idx,), lambda g: (g.copy(),))
        imax = int(np.argmax(np.abs(xs)))
        sgn = np.sign(xs[imax])
        y = xs / peak

        def backward(g):
            gx = g / peak
            gx[imax] -= sgn * np.dot(g, xs) / peak**2
            return (gx,)

        return self._emit("peak_normalize", y, (x.idx,), backward)

    def affine(self, x: Var, gain: float, offset: float = 0.0) -> Var:
        y = gain * x.data + offset

        def backward(g):
            return (gain * g,)

        return self._emit("affine", y, (x.idx,), backward)

    def add_vector(self, x: Var, v: np.ndarray) -> Var:
        y = x.data + v

        def backward(g):
            return (g.copy(),)

        return self._emit("add_vector", y, (x.idx,), backward)

    def relu(self, x: Var) -> Var:
        xs = x.data
        y = np.maximum(xs, 0.0)
        mask = xs > 0  # subgradient 0 exactly at the clip boundary

        def backward(g):
            return (g * mask,)

        return self._emit("relu", y, (x.idx,), backward)

    def sqrt(self, x: Var) -> Var:
        y = np.sqrt(x.data)

        def backward(g):
            out = np.zeros_like(g)
            np.divide(g, 2.0 * y, out=out, where=y > 0)
            return (out,)

        return self._emit("sqrt", y, (x.idx,), backward)

    def square_mag(self, x: Var) -> Var:
        """|E|^2 for complex fields, E^2 for real signals; output is real."""
        xs = x.data
        if np.iscomplexobj(xs):
            y = xs.real**2 + xs.imag**2

            def backward(g):
                return (2.0 * xs * g,)

        else:
            y = xs**2

            def backward(g):
                return (2.0 * xs * g,)

        return self._emit("square_mag", y, (x.idx,), backward)

    def standardize(self, x: Var, interior: slice) -> Var:
        """Remove DC and scale to unit variance using interior statistics only."""
        xs = x.data
        core = xs[interior]
        n_i = len(core)
        mu = core.mean()
        s = np.sqrt(np.mean((core - mu) ** 2))
        if s == 0:
            raise NumericalFaultError("zero variance in standardize", op="standardize")
        y = (xs - mu) / s

        def backward(g):
            gx = g / s
            correction = (g.sum() + y * np.dot(g, y)) / (n_i * s)
            gx[interior] -= correction[interior]
            return (gx,)

        return self._emit("standardize", y, (x.idx,), backward)

    def rms_rescale(self, x: Var, target_scale: float) -> Var:
        """Scale so the output RMS equals target_scale."""
        v = x.data
        r = np.sqrt(np.mean(v**2))
        if r == 0:
            raise NumericalFaultError("zero RMS in rescale", op="rms_rescale")
        c = target_scale
        y = v * (c / r)

        def backward(g):
            return ((c / r) * g - v * (c / (len(v) * r**3)) * np.dot(g, v),)

        return self._emit("rms_rescale", y, (x.idx,), backward)

    def slice(self, x: Var, start: int, stop: int) -> Var:
        n = len(x.data)
        y = x.data[start:stop].copy()

        def backward(g):
            gx = np.zeros(n, dtype=g.dtype)
            gx[start:stop] = g
            return (gx,)

        return self._emit("slice", y, (x.idx,), backward)

    def downsample(self, x: Var, sps: int, phase: int) -> Var:
        if not 0 <= phase < sps:
            raise ValueError("phase out of range")
        n = len(x.data)
        y = x.data[phase::sps].copy()

        def backward(g):
            gx = np.zeros(n, dtype=g.dtype)
            gx[phase::sps] = g
            return (gx,)

        return self._emit("downsample", y, (x.idx,), backward)

    def gather(self, x: Var, indices: np.ndarray) -> Var:
        n = len(x.data)
        idx = np.asarray(indices)
        y = x.data[idx].copy()

        def backward(g):
            gx = np.zeros(n, dtype=g.dtype)
            np.add.at(gx, idx, g)
            return (gx,)

        return self._emit("gather", y, (x.idx,), backward)

    def mse(self, x: Var, target: np.ndarray) -> Var:
        if len(x.data) != len(target):
            raise ValueError("mse operands must have equal length")
        resid = x.data - target
        loss = float(np.mean(resid**2))

        def backward(g):
            return (g * 2.0 * resid / len(resid),)

        return self._emit("mse", loss, (x.idx,), backward)

    # -- reverse pass ---------------------------------------------------------

    def backward(self, loss: Var) -> None:
        """Accumulate d(loss)/d(parameter) into every Parameter on the tape."""
        if self._consumed:
            raise RuntimeError("tape already consumed; run a fresh forward pass")
        if not self._nodes:
            raise RuntimeError("backward called before any forward computation")
        if not np.isscalar(loss.data) and np.ndim(loss.data) != 0:
            raise ValueError("backward seed must be a scalar loss")
        self._consumed = True

        grads: dict[int, np.ndarray | float] = {loss.idx: 1.0}
        for idx in range(len(self._nodes) - 1, -1, -1):
            node = self._nodes[idx]
            g = grads.pop(idx, None)
            if g is None:
                continue
            if node.param is not None:
                node.param.grad += g
                continue
            if node.backward is None:
                continue
            for in_idx, gi in zip(node.inputs, node.backward(g)):
                if in_idx in grads:
                    grads[in_idx] = grads[in_idx] + gi
                else:
                    grads[in_idx] = gi
