"""Run artifacts: deterministic CSV/JSON writers and the run manifest.

CSV files carry a header row and 17-significant-digit floats, so they
round-trip losslessly and are byte-identical across reruns with the
same inputs. Timestamps (and anything else that varies between
identical reruns, like the thread count) live only in manifest.json.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

VERSION = "0.1.0"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def format_float(v: float) -> str:
    return f"{float(v):.17g}"


def write_csv(path: str, header: list[str], columns: list[np.ndarray]) -> None:
    if len(header) != len(columns):
        raise ValueError("header and column count differ")
    cols = [np.asarray(c).reshape(-1) for c in columns]
    n = cols[0].shape[0]
    if any(c.shape[0] != n for c in cols):
        raise ValueError("columns differ in length")
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join(format_float(c[i]) for c in cols))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, default=_jsonable)
        fh.write("\n")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int | None = None
    threads: int | None = None
    version: str = VERSION
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "threads": self.threads,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "outputs": sorted(self.outputs),
        }


class RunWriter:
    """Collects a run's artifacts in one directory and logs the manifest.

    The directory name is <command>-<first 12 hex of the config hash>,
    so identical configs land in the same place and reruns overwrite
    their own previous artifacts.
    """

    def __init__(self, base_dir: str, command: str, config_hash: str,
                 seed: int | None = None, threads: int | None = None):
        self.dir = os.path.join(base_dir, f"{command}-{config_hash[:12]}")
        os.makedirs(self.dir, exist_ok=True)
        self.manifest = RunManifest(
            command=command, config_hash=config_hash, seed=seed,
            threads=threads,
            started=datetime.now(timezone.utc).isoformat())

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def csv(self, name: str, header: list[str], columns) -> str:
        p = self.path(name)
        write_csv(p, header, columns)
        self.manifest.outputs.append(name)
        return p

    def json(self, name: str, obj) -> str:
        p = self.path(name)
        write_json(p, obj)
        self.manifest.outputs.append(name)
        return p

    def close(self) -> str:
        self.manifest.finished = datetime.now(timezone.utc).isoformat()
        p = self.path("manifest.json")
        write_json(p, self.manifest.as_dict())
        return self.dir
