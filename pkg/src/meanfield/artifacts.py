"""Writers for run outputs and the run manifest.

CSV floats are written with ``repr`` precision so a rerun from a manifest can
be compared byte for byte; JSON reports are sorted and map non-finite
floats to ``null``.
"""

from dataclasses import asdict, dataclass, field
import csv
import datetime as _dt
import hashlib
import json
import math
import os
from pathlib import Path
import subprocess

import numpy as np

MANIFEST_NAME = "manifest.json"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, rows, columns=None):
    """Write dict rows (or a header plus sequences) with a fixed column order."""
    path = Path(path)
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r[c] for c in columns] if isinstance(r, dict) else list(r)
            w.writerow([_fmt(v) for v in vals])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if obj is None or isinstance(obj, (str, int)):
        return obj
    return str(obj)


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def tool_version():
    """Package version plus ``git describe`` of the source tree when available."""
    from . import __version__

    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        rev = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# Grids and particles


def grid_rows(grid, values=None):
    """Rows ``(x_1, .., x_d, value)`` over the cells of ``grid``."""
    c = grid.centers().reshape(-1, grid.d)
    v = (grid.values if values is None else np.asarray(values)).reshape(-1)
    return np.column_stack([c, v])


def write_density(path, snapshots):
    """One column per snapshot time, one row per cell."""
    times = sorted(snapshots)
    g0 = snapshots[times[0]]
    c = g0.centers().reshape(-1, g0.d)
    cols = [f"x{a + 1}" for a in range(g0.d)] + [f"t={t!r}" for t in times]
    data = np.column_stack([c] + [snapshots[t].values.reshape(-1) for t in times])
    return write_csv(path, data.tolist(), cols)


def write_positions(path, snapshots, d):
    """Long format ``id, t, x1..xd``, one row per particle and time."""
    cols = ["id", "t"] + [f"x{a + 1}" for a in range(d)]
    rows = []
    for t in sorted(snapshots):
        x = snapshots[t]
        for k in range(x.shape[0]):
            rows.append([k, float(t), *x[k].tolist()])
    return write_csv(path, rows, cols)


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class RunManifest:
    """Everything needed to repeat a run on the same build.

    ``config`` is the fully resolved flat-key config (including the seed
    actually used); ``outputs`` maps file names to sha256 digests.
    """

    subcommand: str
    kind: str
    config: dict
    args: dict = field(default_factory=dict)
    seed: int = 0
    seed_source: str = "config"
    threads: int = 1
    version: str = ""
    derived: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    exit_status: int = 0
    outputs: dict = field(default_factory=dict)

    def add_outputs(self, out_dir, names):
        for n in names:
            p = Path(out_dir) / n
            if p.exists():
                self.outputs[n] = sha256(p)

    def write(self, out_dir):
        return write_json(Path(out_dir) / MANIFEST_NAME, asdict(self))


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    raw = json.loads(path.read_text())
    return RunManifest(**raw)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
