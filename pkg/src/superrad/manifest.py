"""Run manifests written next to every CLI output."""
from __future__ import annotations

import json
import os
from pathlib import Path

from . import __version__

SUFFIX = ".manifest.json"


def manifest_path(output) -> Path:
    return Path(str(output) + SUFFIX)


def _relative(paths, base):
    return [os.path.relpath(Path(p).resolve(), base) for p in paths]


def write_manifest(path, subcommand, config, inputs=(), outputs=(), seed=None, duration_s=None):
    """Write a JSON manifest; paths are stored relative to its directory.

    Wall-clock duration is included only when given, so that reruns of the
    same command leave byte-identical manifests.
    """
    path = Path(path)
    base = path.resolve().parent
    body = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": _relative(inputs, base),
        "outputs": _relative(outputs, base),
    }
    if duration_s is not None:
        body["duration_s"] = round(float(duration_s), 3)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
