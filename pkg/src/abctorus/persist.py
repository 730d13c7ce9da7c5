"""Deterministic JSON/CSV writers and the run manifest."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .scheduler import fmt_rational


def to_plain(obj):
    """Convert reports to JSON-safe values: exact rationals become "num/den"."""
    if hasattr(obj, "to_json"):
        return to_plain(obj.to_json())
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, Fraction):
        return fmt_rational(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(to_plain(obj), indent=2, sort_keys=True) + "\n"


def jsonl(records) -> str:
    """One compact JSON object per line."""
    return "".join(json.dumps(to_plain(r), sort_keys=True) + "\n" for r in records)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_rational(v) if isinstance(v, Fraction) else
                    (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])
    return buf.getvalue()


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """Files written by one invocation, with content digests.

    Wall-clock times are kept apart from the digests: they are the only field that
    differs between otherwise identical runs.
    """

    config_hash: str
    command: str
    out_dir: Path
    files: dict = field(default_factory=dict)
    wall_clock: dict = field(default_factory=dict)

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, dumps(obj))

    def write_csv(self, name: str, header, rows) -> Path:
        return self.write_text(name, csv_text(header, rows))

    def to_json(self) -> dict:
        return {"config_hash": self.config_hash, "artifact_version": __version__,
                "command": self.command,
                "files": [{"path": k, "sha256": v} for k, v in sorted(self.files.items())],
                "wall_clock_seconds": self.wall_clock}

    def finish(self) -> Path:
        path = self.out_dir / f"manifest_{self.command}.json"
        path.write_text(dumps(self))
        return path


def verify_manifest(path: Path) -> list[str]:
    """Names of listed files whose digest no longer matches (empty when complete)."""
    data = json.loads(Path(path).read_text())
    root = Path(path).parent
    bad = []
    for f in data["files"]:
        p = root / f["path"]
        if not p.exists() or sha256_file(p) != f["sha256"]:
            bad.append(f["path"])
    return bad
