"""Experiment recipes: training studies, sweeps and figure-data exports.

Composes trainer and evaluator into the reported studies.  Every recipe
returns plain `Table` objects keyed by output filename plus an `info` dict for
the manifest, so the service can ship results as JSON and the CLI can render
byte-stable CSVs.  Independent (mode, taps, seed, sweep-point) units run on a
worker pool sized by `jobs`, capped by the ISILEARN_THREADS environment
variable; results are collected in submission order so parallel runs stay
deterministic.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigurationError
from .evaluator import (
    KP4_BER,
    KP4_SER,
    PointEvaluation,
    b2b_electrical_response,
    evaluate_ser,
    eye_histogram,
    eye_opening,
    folded_spectrum,
    ripple_db,
    theory_ser_4pam,
)
from .link import LinkSimulator
from .reports import EXACT_FLOAT_FMT, Table
from .trainer import ScreenResult, TrainResult, screen_learning_rates, train

ENV_THREAD_CAP = "ISILEARN_THREADS"


def effective_jobs(jobs: int) -> int:
    cap = os.environ.get(ENV_THREAD_CAP)
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError:
            raise ConfigurationError(f"{ENV_THREAD_CAP} must be an integer, got {cap!r}")
    return max(1, jobs)


def _pmap(fn, arg_tuples: list[tuple], jobs: int) -> list:
    """Ordered map over a worker pool; falls back to inline execution for jobs=1."""
    jobs = effective_jobs(jobs)
    if jobs == 1 or len(arg_tuples) <= 1:
        return [fn(*args) for args in arg_tuples]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *args) for args in arg_tuples]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# training studies


@dataclass
class TrainedRun:
    mode: str
    num_taps: int
    seed: int
    result: TrainResult

    @property
    def lr0(self) -> float:
        return self.result.config.lr0


def _train_unit(
    cfg: ExperimentConfig, mode: str, num_taps: int, seed: int, lr0: float, p_in_dbm: float | None
) -> TrainedRun:
    link = LinkSimulator(cfg.link_config(p_in_dbm))
    result = train(link, cfg.train_config(mode, num_taps, seed, lr0))
    return TrainedRun(mode=mode, num_taps=num_taps, seed=seed, result=result)


def _screen_unit(
    cfg: ExperimentConfig, mode: str, num_taps: int, seed: int, p_in_dbm: float | None
) -> ScreenResult:
    link = LinkSimulator(cfg.link_config(p_in_dbm))
    return screen_learning_rates(
        link,
        cfg.train_config(mode, num_taps, seed, cfg.lr0),
        lr_grid=tuple(cfg.lr0_grid),
        screen_symbols=cfg.screen_symbols,
    )


def train_study(
    cfg: ExperimentConfig, jobs: int = 1, p_in_dbm: float | None = None
) -> tuple[list[TrainedRun], dict[str, float]]:
    """Train every (mode, taps, seed) combination at one operating point.

    When learning-rate screening is enabled the grid is screened once per
    (mode, taps) on the first seed and the winning lr0 is reused for the
    remaining seeds.
    """
    combos = list(product(cfg.modes, cfg.taps))
    selected: dict[str, float] = {}
    runs: list[TrainedRun] = []

    if cfg.screen_lr and len(cfg.lr0_grid) > 1:
        screens = _pmap(
            _screen_unit, [(cfg, m, t, cfg.seeds[0], p_in_dbm) for m, t in combos], jobs
        )
        first_runs = {}
        for (mode, taps), screen in zip(combos, screens):
            selected[f"{mode}_{taps}"] = screen.selected_lr0
            first_runs[(mode, taps)] = TrainedRun(mode, taps, cfg.seeds[0], screen.best)
    else:
        results = _pmap(
            _train_unit, [(cfg, m, t, cfg.seeds[0], cfg.lr0, p_in_dbm) for m, t in combos], jobs
        )
        first_runs = {}
        for (mode, taps), run in zip(combos, results):
            selected[f"{mode}_{taps}"] = cfg.lr0
            first_runs[(mode, taps)] = run

    rest = [
        (cfg, mode, taps, seed, selected[f"{mode}_{taps}"], p_in_dbm)
        for (mode, taps) in combos
        for seed in cfg.seeds[1:]
    ]
    rest_runs = _pmap(_train_unit, rest, jobs)

    by_combo: dict[tuple[str, int], list[TrainedRun]] = {c: [first_runs[c]] for c in combos}
    for run in rest_runs:
        by_combo[(run.mode, run.num_taps)].append(run)
    for combo in combos:
        runs.extend(by_combo[combo])
    return runs, selected


# ---------------------------------------------------------------------------
# sweeps


def _eval_snr_unit(cfg: ExperimentConfig, run: TrainedRun, snr_db: float) -> PointEvaluation:
    link = LinkSimulator(cfg.link_config())
    return evaluate_ser(
        link,
        run.result.pulse_shaper.taps,
        run.result.rx_filter.taps,
        n_symbols=cfg.eval_symbols,
        seed=run.seed,
        snr_db=snr_db,
        pilot_len=cfg.pilot_symbols,
        chunk_symbols=cfg.eval_chunk_symbols,
    )


def b2b_sweep_table(cfg: ExperimentConfig, runs: list[TrainedRun], jobs: int = 1) -> Table:
    """SER-vs-SNR rows for trained runs, with the closed-form theory column."""
    units = [(cfg, run, snr) for run in runs for snr in cfg.snr_grid_db]
    evals = _pmap(_eval_snr_unit, units, jobs)
    table = Table(["snr_db", "mode", "num_taps", "seed", "ser", "theory_ser"])
    for (c, run, snr), ev in zip(units, evals):
        table.add(float(snr), run.mode, run.num_taps, run.seed, ev.estimate.ser, float(theory_ser_4pam(snr)))
    return table


def _fiber_point_unit(
    cfg: ExperimentConfig, mode: str, num_taps: int, seed: int, p_in_dbm: float, lr0: float
) -> tuple[TrainedRun, PointEvaluation]:
    link = LinkSimulator(cfg.link_config(p_in_dbm))
    result = train(link, cfg.train_config(mode, num_taps, seed, lr0))
    ev = evaluate_ser(
        link,
        result.pulse_shaper.taps,
        result.rx_filter.taps,
        n_symbols=cfg.eval_symbols,
        seed=seed,
        sigma=cfg.rx_noise_sigma,
        pilot_len=cfg.pilot_symbols,
        chunk_symbols=cfg.eval_chunk_symbols,
    )
    return TrainedRun(mode, num_taps, seed, result), ev


def sweep_power_fiber(cfg: ExperimentConfig, jobs: int = 1) -> tuple[Table, Table]:
    """Launch-power sweep with per-point training at matched powers.

    Each (mode, taps, power, seed) unit trains its own filters at that power
    and evaluates them there, reporting measured received power.  Returns the
    SER table and the KP4 reference table.
    """
    selected: dict[tuple[str, int, float], float] = {}
    if cfg.screen_lr and len(cfg.lr0_grid) > 1:
        screen_units = [
            (cfg, m, t, cfg.seeds[0], p)
            for m, t, p in product(cfg.modes, cfg.taps, cfg.power_grid_dbm)
        ]
        screens = _pmap(_screen_unit, screen_units, jobs)
        for (m, t, p), screen in zip(product(cfg.modes, cfg.taps, cfg.power_grid_dbm), screens):
            selected[(m, t, p)] = screen.selected_lr0
    else:
        for m, t, p in product(cfg.modes, cfg.taps, cfg.power_grid_dbm):
            selected[(m, t, p)] = cfg.lr0

    units = [
        (cfg, m, t, seed, p, selected[(m, t, p)])
        for m, t, p in product(cfg.modes, cfg.taps, cfg.power_grid_dbm)
        for seed in cfg.seeds
    ]
    outcomes = _pmap(_fiber_point_unit, units, jobs)

    table = Table(["p_in_dbm", "p_rec_dbm", "mode", "num_taps", "seed", "ser"])
    for (c, mode, taps, seed, p, lr0), (run, ev) in zip(units, outcomes):
        table.add(float(p), ev.p_rec_dbm, mode, taps, seed, ev.estimate.ser)
    kp4 = Table(["kp4_ber", "kp4_ser_gray"])
    kp4.add(KP4_BER, KP4_SER)
    return table, kp4


# ---------------------------------------------------------------------------
# diagnostics


def folded_spectrum_table(cfg: ExperimentConfig, runs: list[TrainedRun]) -> tuple[Table, dict]:
    table = Table(["f_hz", "b_mag_db", "mode"])
    ripples = {}
    link = LinkSimulator(cfg.link_config())
    for run in runs:
        h = b2b_electrical_response(link, run.result.pulse_shaper.taps, run.result.rx_filter.taps)
        spectrum = folded_spectrum(
            h, cfg.sps, cfg.signal_spec().sample_rate, source=f"{run.mode}/{run.num_taps}"
        )
        ripples[f"{run.mode}_{run.num_taps}"] = ripple_db(spectrum)
        for f_hz, mag in zip(spectrum.freqs_hz, spectrum.mag_db):
            table.add(float(f_hz), float(mag), run.mode)
    return table, ripples


def eye_table(
    cfg: ExperimentConfig, run: TrainedRun, p_in_dbm: float | None = None
) -> tuple[Table, dict]:
    """Eye histogram (and opening metrics) of a trained run at its operating point."""
    link = LinkSimulator(cfg.link_config(p_in_dbm))
    sigma = cfg.rx_noise_sigma if cfg.scenario == "fiber2km" else None
    snr = cfg.train_snr_db if cfg.scenario == "b2b" else None
    n_eye = min(cfg.eval_symbols, cfg.eval_chunk_symbols)
    ev = evaluate_ser(
        link,
        run.result.pulse_shaper.taps,
        run.result.rx_filter.taps,
        n_symbols=n_eye,
        seed=run.seed,
        snr_db=snr,
        sigma=sigma,
        pilot_len=cfg.pilot_symbols,
        chunk_symbols=cfg.eval_chunk_symbols,
        keep_waveform=True,
    )
    hist = eye_histogram(ev.waveform, cfg.sps, amp_bins=cfg.eye_amp_bins)
    opening, phase = eye_opening(ev.waveform, ev.waveform_symbols, ev.sync)
    table = Table(["phase_bin", "amp_bin", "count"])
    for p_bin in range(hist.counts.shape[0]):
        for a_bin in range(hist.counts.shape[1]):
            count = int(hist.counts[p_bin, a_bin])
            if count:
                table.add(p_bin, a_bin, count)
    metrics = {
        "mode": run.mode,
        "num_taps": run.num_taps,
        "p_rec_dbm": ev.p_rec_dbm,
        "ser": ev.estimate.ser,
        "eye_opening": opening,
        "eye_phase": phase,
        "amp_lo": float(hist.amp_edges[0]),
        "amp_hi": float(hist.amp_edges[-1]),
    }
    return table, metrics


# ---------------------------------------------------------------------------
# filter-tap round trip


def taps_table(run: TrainedRun) -> Table:
    table = Table(
        ["index", "pulse_shaper_tap", "rx_filter_tap"], float_fmt=EXACT_FLOAT_FMT
    )
    for i, (ps, rx) in enumerate(zip(run.result.pulse_shaper.taps, run.result.rx_filter.taps)):
        table.add(i, float(ps), float(rx))
    return table


def loss_table(run: TrainedRun) -> Table:
    table = Table(["step", "lr", "loss"])
    for step, (lr, loss) in enumerate(zip(run.result.lr, run.result.loss)):
        table.add(step, float(lr), float(loss))
    return table


def taps_filename(mode: str, num_taps: int, seed: int, first_seed: int) -> str:
    if seed == first_seed:
        return f"taps_{mode}_{num_taps}.csv"
    return f"taps_{mode}_{num_taps}_seed{seed}.csv"


@dataclass
class TapsEntry:
    mode: str
    num_taps: int
    seed: int
    pulse_shaper: np.ndarray
    rx_filter: np.ndarray


def parse_taps_table(table: Table, mode: str, num_taps: int, seed: int) -> TapsEntry:
    if table.columns != ["index", "pulse_shaper_tap", "rx_filter_tap"]:
        raise ConfigurationError(f"unexpected taps columns: {table.columns}")
    ps = np.array([float(r[1]) for r in table.rows])
    rx = np.array([float(r[2]) for r in table.rows])
    if len(ps) != num_taps:
        raise ConfigurationError(
            f"taps file for {mode}/{num_taps} holds {len(ps)} taps, expected {num_taps}"
        )
    return TapsEntry(mode=mode, num_taps=num_taps, seed=seed, pulse_shaper=ps, rx_filter=rx)


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: ExperimentConfig, jobs: int = 1) -> tuple[dict[str, Table], dict]:
    runs, selected = train_study(cfg, jobs=jobs)
    files: dict[str, Table] = {}
    info: dict = {"selected_lr0": selected, "train_steps": cfg.train_symbols // cfg.batch_size}
    sigmas = {}
    for run in runs:
        name = taps_filename(run.mode, run.num_taps, run.seed, cfg.seeds[0])
        files[name] = taps_table(run)
        files[name.replace("taps_", "loss_")] = loss_table(run)
        sigmas[f"{run.mode}_{run.num_taps}_seed{run.seed}"] = run.result.sigma
    info["train_sigma"] = sigmas
    return files, info


def cmd_evaluate(cfg: ExperimentConfig, entries: list[TapsEntry], jobs: int = 1) -> tuple[dict[str, Table], dict]:
    for entry in entries:
        if entry.num_taps not in cfg.taps:
            raise ConfigurationError(
                f"taps entry {entry.mode}/{entry.num_taps} not in configured taps {cfg.taps}"
            )
    files: dict[str, Table] = {}
    info: dict = {}
    runs = [
        TrainedRun(
            mode=e.mode,
            num_taps=e.num_taps,
            seed=e.seed,
            result=_frozen_result(cfg, e),
        )
        for e in entries
    ]
    if cfg.scenario == "b2b":
        files["ser_vs_snr.csv"] = b2b_sweep_table(cfg, runs, jobs=jobs)
    else:
        table = Table(["p_in_dbm", "p_rec_dbm", "mode", "num_taps", "seed", "ser"])
        units = [(cfg, run, p) for run in runs for p in cfg.power_grid_dbm]
        evals = _pmap(_eval_power_frozen_unit, units, jobs)
        for (c, run, p), ev in zip(units, evals):
            table.add(float(p), ev.p_rec_dbm, run.mode, run.num_taps, run.seed, ev.estimate.ser)
        files["ser_vs_power.csv"] = table
        kp4 = Table(["kp4_ber", "kp4_ser_gray"])
        kp4.add(KP4_BER, KP4_SER)
        files["kp4_reference.csv"] = kp4
    return files, info


def _frozen_result(cfg: ExperimentConfig, entry: TapsEntry) -> TrainResult:
    from .signals import FirFilter

    tc = cfg.train_config(entry.mode, entry.num_taps, entry.seed, cfg.lr0)
    return TrainResult(
        config=tc,
        pulse_shaper=FirFilter(entry.pulse_shaper),
        rx_filter=FirFilter(entry.rx_filter),
        loss=np.zeros(0),
        lr=np.zeros(0),
        sigma=cfg.rx_noise_sigma if cfg.scenario == "fiber2km" else 0.0,
        sync=None,  # re-derived at evaluation time
        p_rec_dbm=float("nan"),
    )


def _eval_power_frozen_unit(cfg: ExperimentConfig, run: TrainedRun, p_in_dbm: float) -> PointEvaluation:
    link = LinkSimulator(cfg.link_config(p_in_dbm))
    return evaluate_ser(
        link,
        run.result.pulse_shaper.taps,
        run.result.rx_filter.taps,
        n_symbols=cfg.eval_symbols,
        seed=run.seed,
        sigma=cfg.rx_noise_sigma,
        pilot_len=cfg.pilot_symbols,
        chunk_symbols=cfg.eval_chunk_symbols,
    )


FIGURES = ("fig2", "fig3", "fig4", "fig5")


def figure_config(figure: str, base: ExperimentConfig | None) -> ExperimentConfig:
    """Built-in per-figure defaults; a user config overrides everything but the scenario."""
    if figure not in FIGURES:
        raise ConfigurationError(f"unknown figure {figure!r}; choose from {FIGURES}")
    scenario = "b2b" if figure in ("fig2", "fig3") else "fiber2km"
    if base is None:
        taps = {"fig2": [9, 25], "fig3": [25], "fig4": [15], "fig5": [15, 25]}[figure]
        seeds = [0] if figure in ("fig3", "fig4") else [0, 1, 2, 3, 4]
        base = ExperimentConfig(scenario=scenario, taps=taps, seeds=seeds)
    return base.model_copy(update={"scenario": scenario})


def cmd_reproduce(
    figure: str, cfg: ExperimentConfig | None = None, scale: float = 1.0, jobs: int = 1
) -> tuple[dict[str, Table], dict]:
    cfg = figure_config(figure, cfg).scaled(scale)
    info: dict = {"figure": figure}
    files: dict[str, Table] = {}

    if figure == "fig2":
        runs, selected = train_study(cfg, jobs=jobs)
        info["selected_lr0"] = selected
        files["ser_vs_snr.csv"] = b2b_sweep_table(cfg, runs, jobs=jobs)
    elif figure == "fig3":
        runs, selected = train_study(cfg, jobs=jobs)
        info["selected_lr0"] = selected
        table, ripples = folded_spectrum_table(cfg, runs)
        info["ripple_db"] = ripples
        files["folded_spectrum.csv"] = table
    elif figure == "fig4":
        runs, selected = train_study(cfg, jobs=jobs, p_in_dbm=cfg.eye_power_dbm)
        info["selected_lr0"] = selected
        eyes = {}
        for run in runs:
            table, metrics = eye_table(cfg, run, p_in_dbm=cfg.eye_power_dbm)
            files[f"eye_{run.mode}.csv"] = table
            eyes[run.mode] = metrics
        info["eyes"] = eyes
    elif figure == "fig5":
        table, kp4 = sweep_power_fiber(cfg, jobs=jobs)
        files["ser_vs_power.csv"] = table
        files["kp4_reference.csv"] = kp4
    return files, info


def cmd_diagnose(cfg: ExperimentConfig, entries: list[TapsEntry], jobs: int = 1) -> tuple[dict[str, Table], dict]:
    runs = [
        TrainedRun(mode=e.mode, num_taps=e.num_taps, seed=e.seed, result=_frozen_result(cfg, e))
        for e in entries
    ]
    files: dict[str, Table] = {}
    spectrum_table, ripples = folded_spectrum_table(cfg, runs)
    files["folded_spectrum.csv"] = spectrum_table
    info: dict = {"ripple_db": ripples, "eyes": {}}
    p_in = cfg.eye_power_dbm if cfg.scenario == "fiber2km" else None
    for run in runs:
        table, metrics = eye_table(cfg, run, p_in_dbm=p_in)
        name = "eye.csv" if len(runs) == 1 else f"eye_{run.mode}_{run.num_taps}.csv"
        files[name] = table
        info["eyes"][f"{run.mode}_{run.num_taps}"] = metrics
    return files, info
