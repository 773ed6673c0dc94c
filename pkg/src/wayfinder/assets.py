"""Locate bundled data files (grammar, symbol inventory, corpora, worlds)."""

from __future__ import annotations

import json
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent / "data"


def data_path(*parts) -> Path:
    p = DATA_DIR.joinpath(*parts)
    if not p.exists():
        raise FileNotFoundError(f"no bundled data file {'/'.join(parts)!r}")
    return p


def load_json(*parts):
    with open(data_path(*parts)) as fh:
        return json.load(fh)
