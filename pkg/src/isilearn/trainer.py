"""Optimisation loop: Adam + OneCycle schedule + gradient clipping + unit-norm filters.

Three trainable-block modes are supported: pulse shaper only (``PS``),
receiver filter only (``RxF``) and joint (``PS_and_RxF``).  Whatever is not
selected stays bit-identical to its RRC initialisation for the whole run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import diffchain
from .autodiff import Parameter
from .errors import NumericalFaultError, ScreeningError
from .link import LinkSimulator, SyncInfo, calibrate_snr, find_sync
from .rng import Stream, stream_rng
from .signals import FirFilter, design_rrc, generate_symbols

MODES = ("PS", "RxF", "PS_and_RxF")

PAPER_LR_GRID = (5e-3, 1e-3, 5e-4, 1e-4, 5e-5)


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "PS_and_RxF"
    num_taps: int = 25
    batch_size: int = 1000
    total_train_symbols: int = 2_500_000
    lr0: float = 5e-4
    peak_lr_factor: float = 10.0  # max lr = peak_lr_factor * lr0
    final_lr_divisor: float = 25.0  # last-step lr = lr0 / final_lr_divisor
    ramp_fraction: float = 0.3
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    train_snr_db: float | None = 12.0  # None: use the link's fixed noise sigma
    sync_probe_symbols: int = 2048

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.total_train_symbols % self.batch_size:
            raise ValueError("total_train_symbols must be an integer multiple of batch_size")
        if self.num_taps < 3:
            raise ValueError("num_taps must be >= 3")

    @property
    def steps(self) -> int:
        return self.total_train_symbols // self.batch_size


@dataclass
class OptimizerState:
    """Per-parameter Adam moments; bias correction uses the 1-based step count."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[Parameter]) -> "OptimizerState":
        return cls(
            m=[np.zeros_like(p.values) for p in params],
            v=[np.zeros_like(p.values) for p in params],
        )


def adam_step(
    params: list[Parameter],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericalFaultError("non-finite gradient", op=f"adam_step[{p.name}]")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, m, v in zip(params, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * p.grad
        v *= beta2
        v += (1.0 - beta2) * p.grad**2
        p.values -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def onecycle_lr(
    step: int,
    total_steps: int,
    lr0: float,
    peak_factor: float = 10.0,
    final_divisor: float = 25.0,
    ramp_fraction: float = 0.3,
) -> float:
    """Cosine ramp lr0 -> peak over the first `ramp_fraction` of steps, then a
    cosine anneal down to lr0/final_divisor at the last step."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    last = total_steps - 1
    if last == 0:
        return lr0
    peak = peak_factor * lr0
    boundary = int(round(ramp_fraction * last))
    if step <= boundary:
        if boundary == 0:
            return peak
        frac = 0.5 * (1.0 - math.cos(math.pi * step / boundary))
        return lr0 + (peak - lr0) * frac
    floor = lr0 / final_divisor
    frac = 0.5 * (1.0 + math.cos(math.pi * (step - boundary) / (last - boundary)))
    return floor + (peak - floor) * frac


def clip_grad_norm(params: list[Parameter], clip_norm: float) -> float:
    """Scale all gradients so their global L2 norm does not exceed clip_norm."""
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    total = math.sqrt(sum(float(np.dot(p.grad, p.grad)) for p in params))
    if total > clip_norm:
        scale = clip_norm / total
        for p in params:
            p.grad *= scale
    return total


def renormalize_filters(params: list[Parameter]) -> None:
    """Project each trainable filter back onto the unit L2 sphere."""
    for p in params:
        norm = float(np.linalg.norm(p.values))
        if norm == 0 or not np.isfinite(norm):
            raise NumericalFaultError("degenerate filter norm", op=f"renormalize[{p.name}]")
        p.values /= norm


@dataclass
class TrainResult:
    config: TrainConfig
    pulse_shaper: FirFilter
    rx_filter: FirFilter
    loss: np.ndarray  # per-step training loss
    lr: np.ndarray  # per-step learning rate
    sigma: float  # noise sigma used during training
    sync: SyncInfo
    p_rec_dbm: float

    @property
    def final_loss(self) -> float:
        return float(self.loss[-1])


def initial_filters(cfg: TrainConfig, sps: int, rolloff: float) -> tuple[FirFilter, FirFilter]:
    rrc = design_rrc(cfg.num_taps, sps, rolloff)
    ps = FirFilter(rrc.taps.copy(), learnable=cfg.mode in ("PS", "PS_and_RxF"))
    rxf = FirFilter(rrc.taps.copy(), learnable=cfg.mode in ("RxF", "PS_and_RxF"))
    return ps, rxf


def train(link: LinkSimulator, cfg: TrainConfig) -> TrainResult:
    """Run the full optimisation recipe and return the trained filter pair."""
    spec = link.cfg.spec
    ps, rxf = initial_filters(cfg, spec.sps, link.cfg.rolloff)
    ps_param = Parameter(ps.taps, name="pulse_shaper")
    rx_param = Parameter(rxf.taps, name="rx_filter")
    params = diffchain.ChainParams(ps_param, rx_param)
    trainable = [p for p, f in ((ps_param, ps), (rx_param, rxf)) if f.learnable]

    # One-off per run: symbol alignment and the noise level, both frozen at the
    # RRC initialisation so every mode trains against the same operating point.
    probe = generate_symbols(
        cfg.sync_probe_symbols, seed=stream_rng(cfg.seed, Stream.SYNC_PROBE)
    )
    out = link.simulate(ps_param.values, rx_param.values, probe.amplitudes)
    sync = find_sync(out.rx_waveform, probe.amplitudes, spec.sps, max_lag_symbols=cfg.num_taps)
    p_rec_dbm = 10.0 * np.log10(out.p_rec_w / 1e-3)

    if cfg.train_snr_db is not None:
        calib = generate_symbols(8192, seed=stream_rng(cfg.seed, Stream.CALIBRATION))
        sigma = calibrate_snr(link, ps_param.values, rx_param.values, cfg.train_snr_db, calib.amplitudes)
    else:
        sigma = link.cfg.noise.sigma or 0.0

    sym_rng = stream_rng(cfg.seed, Stream.TRAIN_SYMBOLS)
    noise_rng = stream_rng(cfg.seed, Stream.TRAIN_NOISE)
    padded_len = 2 * link.cfg.guard_len + cfg.batch_size * spec.sps

    state = OptimizerState.for_params(trainable)
    losses = np.empty(cfg.steps)
    lrs = np.empty(cfg.steps)
    for step in range(cfg.steps):
        batch_syms = generate_symbols(cfg.batch_size, seed=sym_rng)
        noise = noise_rng.normal(0.0, sigma, size=padded_len) if sigma > 0 else None
        batch = diffchain.TrainBatch(batch_syms.amplitudes, noise, sync)
        try:
            loss, tape, loss_var = diffchain.forward(link, params, batch)
            for p in trainable:
                p.zero_grad()
            tape.backward(loss_var)
            clip_grad_norm(trainable, cfg.clip_norm)
            lr = onecycle_lr(
                step, cfg.steps, cfg.lr0, cfg.peak_lr_factor, cfg.final_lr_divisor, cfg.ramp_fraction
            )
            adam_step(trainable, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            renormalize_filters(trainable)
        except NumericalFaultError as err:
            raise NumericalFaultError(str(err), op=err.op, step=step) from err
        losses[step] = loss
        lrs[step] = lr

    return TrainResult(
        config=cfg,
        pulse_shaper=FirFilter(ps_param.values.copy(), learnable=ps.learnable),
        rx_filter=FirFilter(rx_param.values.copy(), learnable=rxf.learnable),
        loss=losses,
        lr=lrs,
        sigma=sigma,
        sync=sync,
        p_rec_dbm=float(p_rec_dbm),
    )


@dataclass
class ScreenCandidate:
    lr0: float
    ser: float | None
    diverged: bool
    detail: str = ""


@dataclass
class ScreenResult:
    best: TrainResult
    best_ser: float
    candidates: list[ScreenCandidate] = field(default_factory=list)

    @property
    def selected_lr0(self) -> float:
        return self.best.config.lr0


def screen_learning_rates(
    link: LinkSimulator,
    base_config: TrainConfig,
    lr_grid: tuple[float, ...] = PAPER_LR_GRID,
    screen_symbols: int = 100_000,
) -> ScreenResult:
    """Train once per candidate lr0 and keep the run with the lowest held-out SER.

    Ties resolve to the smaller lr0.  Raises ScreeningError when every
    candidate diverges.
    """
    from .evaluator import evaluate_ser  # local import: evaluator depends on trainer types

    if not lr_grid:
        raise ValueError("lr_grid must be non-empty")
    candidates: list[ScreenCandidate] = []
    results: dict[float, tuple[TrainResult, float]] = {}
    for lr0 in lr_grid:
        cfg = replace(base_config, lr0=lr0)
        try:
            result = train(link, cfg)
            est = evaluate_ser(
                link,
                result.pulse_shaper.taps,
                result.rx_filter.taps,
                n_symbols=screen_symbols,
                seed=cfg.seed,
                snr_db=cfg.train_snr_db,
                sigma=None if cfg.train_snr_db is not None else result.sigma,
                symbol_stream=Stream.SCREEN_SYMBOLS,
                noise_stream=Stream.SCREEN_NOISE,
            )
            candidates.append(ScreenCandidate(lr0=lr0, ser=est.estimate.ser, diverged=False))
            results[lr0] = (result, est.estimate.ser)
        except NumericalFaultError as err:
            candidates.append(ScreenCandidate(lr0=lr0, ser=None, diverged=True, detail=str(err)))
    if not results:
        raise ScreeningError(
            "all learning-rate candidates diverged",
            [f"lr0={c.lr0:g}: {c.detail}" for c in candidates],
        )
    best_lr0 = min(results, key=lambda lr0: (results[lr0][1], lr0))
    best, best_ser = results[best_lr0]
    return ScreenResult(best=best, best_ser=best_ser, candidates=candidates)
