"""Run manifests: resolved config plus input-file digests, written before work.

Manifests carry no timestamps so reruns on identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str, command: str, config: dict, inputs: dict[str, str]) -> str:
    """Write ``<out_dir>/manifest_<command>.json`` and return its path."""
    os.makedirs(out_dir, exist_ok=True)
    record = {
        "command": command,
        "config": config,
        "inputs": {name: {"path": path, "sha256": file_digest(path)} for name, path in sorted(inputs.items())},
    }
    path = os.path.join(out_dir, f"manifest_{command}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
