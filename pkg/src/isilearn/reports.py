"""Tabular results and their deterministic on-disk rendering.

Experiments produce `Table` objects; the CLI renders them to CSV with a fixed
float format (9 significant digits for measurement tables, 17 for filter taps
so they round-trip exactly) and writes a manifest with the resolved
configuration and a content hash per file.  No timestamps anywhere: the same
config and seed must regenerate byte-identical output.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

MEASUREMENT_FLOAT_FMT = "%.9g"
EXACT_FLOAT_FMT = "%.17g"


@dataclass
class Table:
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    float_fmt: str = MEASUREMENT_FLOAT_FMT

    def add(self, *cells) -> None:
        if len(cells) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} cells, got {len(cells)}")
        self.rows.append(list(cells))

    def render_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(self._cell(c) for c in row))
        return "\n".join(lines) + "\n"

    def _cell(self, value) -> str:
        if isinstance(value, bool):
            return "1" if value else "0"
        if isinstance(value, int):
            return str(value)
        if isinstance(value, float):
            return self.float_fmt % value
        return str(value)

    def to_jsonable(self) -> dict:
        return {"columns": self.columns, "rows": self.rows, "float_fmt": self.float_fmt}

    @classmethod
    def from_jsonable(cls, data: dict) -> "Table":
        return cls(
            columns=list(data["columns"]),
            rows=[list(r) for r in data["rows"]],
            float_fmt=data.get("float_fmt", MEASUREMENT_FLOAT_FMT),
        )


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_outputs(
    out_dir: str,
    files: dict[str, Table],
    manifest_extra: dict,
) -> dict:
    """Render every table, write a manifest, and return the manifest dict.

    Files are rendered fully before anything touches disk, so a failing table
    never leaves partial output behind.
    """
    rendered = {name: table.render_csv().encode("utf-8") for name, table in sorted(files.items())}
    manifest = dict(manifest_extra)
    manifest["files"] = {name: content_hash(data) for name, data in rendered.items()}
    manifest_bytes = json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8")

    os.makedirs(out_dir, exist_ok=True)
    for name, data in rendered.items():
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(data)
    with open(os.path.join(out_dir, "manifest.json"), "wb") as fh:
        fh.write(manifest_bytes)
    return manifest
