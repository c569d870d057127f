"""Provenance headers shared by every text artifact the toolkit writes."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__

TOOL = "bintrans"


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def make_provenance(seed=None, config=None, **extra) -> dict:
    prov = {"tool": TOOL, "version": __version__, "seed": seed,
            "config": config_hash(config if config is not None else {})}
    prov.update(extra)
    return prov


def header_line(provenance: dict) -> str:
    return "# " + " ".join(f"{k}={provenance[k]}" for k in provenance) + "\n"


def write_text(path, body: str, provenance: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = header_line(provenance) if provenance is not None else ""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(head + body)


def read_text_lines(path) -> list[str]:
    """Lines of a text artifact with leading ``#`` comment lines removed."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        i += 1
    return lines[i:]


def parse_header(path) -> dict:
    first = Path(path).read_text(encoding="utf-8").split("\n", 1)[0]
    if not first.startswith("# "):
        return {}
    return dict(kv.split("=", 1) for kv in first[2:].split() if "=" in kv)
