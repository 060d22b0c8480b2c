"""Run manifests: config echo, input digests, output digests, tool version.

A manifest is written beside every subcommand's outputs and holds enough
to re-run the command and reproduce them byte-identically.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(
    path: str | Path,
    subcommand: str,
    config: dict,
    inputs: list[str | Path],
    outputs: list[str | Path],
) -> None:
    doc = {
        "tool": "partgraph",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in sorted(map(str, inputs))},
        "outputs": {str(p): sha256_file(p) for p in sorted(map(str, outputs))},
    }
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
