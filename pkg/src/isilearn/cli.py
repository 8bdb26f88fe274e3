"""Command-line client for the experiment service.

The CLI is a thin client: every command is served by the HTTP API (in-process
by default, or a remote instance via --server) and the client only renders
the returned tables to CSV files plus a manifest.  Exit codes: 0 success,
2 configuration error, 3 numerical fault.
"""
from __future__ import annotations

import os
import re
import sys

import click
import httpx

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigurationError
from .reports import Table, write_outputs

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_TAPS_NAME = re.compile(r"^taps_(?P<body>.+?)(?:_seed(?P<seed>\d+))?\.csv$")


class ServiceClient:
    """HTTP client; talks to an in-process app unless a server URL is given."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code == 200:
            return response.json()
        self._fail(response)

    def _fail(self, response) -> None:
        try:
            body = response.json()
        except Exception:
            body = {"detail": response.text}
        detail = body.get("detail", body)
        kind = body.get("kind", "config" if response.status_code in (400, 422) else "other")
        click.echo(f"error: {detail}", err=True)
        sys.exit(EXIT_NUMERICAL if kind == "numerical" else EXIT_CONFIG)


def _load_or_default(config_path: str | None) -> ExperimentConfig:
    try:
        return load_config(config_path) if config_path else ExperimentConfig()
    except Exception as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)


def _read_taps_file(path: str, default_seed: int) -> dict:
    name = os.path.basename(path)
    match = _TAPS_NAME.match(name)
    if not match:
        raise ConfigurationError(f"cannot parse mode/taps from filename {name!r}")
    body = match.group("body")
    mode, _, taps_str = body.rpartition("_")
    if not mode or not taps_str.isdigit():
        raise ConfigurationError(f"cannot parse mode/taps from filename {name!r}")
    seed = int(match.group("seed")) if match.group("seed") else default_seed
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    header = lines[0].split(",")
    if header != ["index", "pulse_shaper_tap", "rx_filter_tap"]:
        raise ConfigurationError(f"{name}: unexpected columns {header}")
    ps, rx = [], []
    for line in lines[1:]:
        cells = line.split(",")
        ps.append(float(cells[1]))
        rx.append(float(cells[2]))
    return {
        "mode": mode,
        "num_taps": int(taps_str),
        "seed": seed,
        "pulse_shaper": ps,
        "rx_filter": rx,
    }


def _collect_taps(taps: tuple[str, ...], taps_dir: str | None, cfg: ExperimentConfig) -> list[dict]:
    paths = list(taps)
    if taps_dir:
        if not os.path.isdir(taps_dir):
            click.echo(f"error: taps directory {taps_dir!r} does not exist", err=True)
            sys.exit(EXIT_CONFIG)
        paths.extend(
            os.path.join(taps_dir, name)
            for name in sorted(os.listdir(taps_dir))
            if _TAPS_NAME.match(name)
        )
    if not paths:
        click.echo("error: no taps files given (use --taps or --taps-dir)", err=True)
        sys.exit(EXIT_CONFIG)
    entries = []
    for path in paths:
        if not os.path.isfile(path):
            click.echo(f"error: taps file {path!r} does not exist", err=True)
            sys.exit(EXIT_CONFIG)
        try:
            entries.append(_read_taps_file(path, cfg.seeds[0]))
        except (ConfigurationError, ValueError, IndexError) as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(EXIT_CONFIG)
    return entries


def _write_response(command: str, out: str, data: dict) -> None:
    files = {name: Table.from_jsonable(tbl) for name, tbl in data["files"].items()}
    manifest_extra = {
        "tool": "isilearn",
        "version": __version__,
        "command": command,
        "config": data["config"],
        "scale": data["scale"],
        "seed_offset": data["seed_offset"],
        "info": data["info"],
    }
    write_outputs(out, files, manifest_extra)
    click.echo(f"{command}: wrote {len(files)} file(s) + manifest.json to {out}")


def _common_payload(cfg: ExperimentConfig, scale: float, seed_offset: int, jobs: int) -> dict:
    return {
        "config": cfg.model_dump(),
        "scale": scale,
        "seed_offset": seed_offset,
        "jobs": jobs,
    }


@click.group()
@click.option("--server", default=None, help="Remote service URL (default: run in-process).")
@click.version_option(__version__)
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Experiment runner for learned pulse shaping / receive filtering studies."""
    ctx.obj = {"server": server}


_shared = [
    click.option("--config", "config_path", type=click.Path(), default=None, help="YAML config."),
    click.option("--out", default="isilearn_out", show_default=True, help="Output directory."),
    click.option("--jobs", default=1, show_default=True, help="Worker pool size."),
    click.option("--scale", default=1.0, show_default=True, help="Symbol-budget scale factor."),
    click.option("--seed-offset", default=0, show_default=True, help="Offset added to all seeds."),
]


def shared_options(fn):
    for opt in reversed(_shared):
        fn = opt(fn)
    return fn


@main.command()
@shared_options
@click.pass_context
def train(ctx, config_path, out, jobs, scale, seed_offset) -> None:
    """Train filters at the configured operating point; write taps and loss traces."""
    cfg = _load_or_default(config_path)
    client = ServiceClient(ctx.obj["server"])
    data = client.post("/train", _common_payload(cfg, scale, seed_offset, jobs))
    _write_response("train", out, data)


@main.command()
@shared_options
@click.option("--taps", multiple=True, type=click.Path(), help="Trained taps CSV (repeatable).")
@click.option("--taps-dir", default=None, type=click.Path(), help="Directory of taps_*.csv files.")
@click.pass_context
def evaluate(ctx, config_path, out, jobs, scale, seed_offset, taps, taps_dir) -> None:
    """Run the configured sweep on frozen filters loaded from taps files."""
    cfg = _load_or_default(config_path)
    entries = _collect_taps(taps, taps_dir, cfg)
    client = ServiceClient(ctx.obj["server"])
    payload = _common_payload(cfg, scale, seed_offset, jobs)
    payload["taps"] = entries
    data = client.post("/evaluate", payload)
    _write_response("evaluate", out, data)


@main.command()
@click.argument("figure", type=click.Choice(["fig2", "fig3", "fig4", "fig5"]))
@shared_options
@click.pass_context
def reproduce(ctx, figure, config_path, out, jobs, scale, seed_offset) -> None:
    """Re-run a study end to end and emit its figure-data CSVs."""
    client = ServiceClient(ctx.obj["server"])
    payload = _common_payload(_load_or_default(config_path), scale, seed_offset, jobs)
    payload["figure"] = figure
    payload["use_default_config"] = config_path is None
    data = client.post("/reproduce", payload)
    _write_response(f"reproduce:{figure}", out, data)


@main.command()
@shared_options
@click.option("--taps", multiple=True, type=click.Path(), help="Trained taps CSV (repeatable).")
@click.option("--taps-dir", default=None, type=click.Path(), help="Directory of taps_*.csv files.")
@click.pass_context
def diagnose(ctx, config_path, out, jobs, scale, seed_offset, taps, taps_dir) -> None:
    """Folded-spectrum and eye diagnostics for given taps."""
    cfg = _load_or_default(config_path)
    entries = _collect_taps(taps, taps_dir, cfg)
    client = ServiceClient(ctx.obj["server"])
    payload = _common_payload(cfg, scale, seed_offset, jobs)
    payload["taps"] = entries
    data = client.post("/diagnose", payload)
    _write_response("diagnose", out, data)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
