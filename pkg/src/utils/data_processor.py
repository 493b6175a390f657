import hashlib
import json
import logging
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)


def provenance_line(seed, config_hash):
    return f"# seed={seed} config_hash={config_hash}\n"


def config_hash(items):
    """Short SHA-256 over sorted ``key = value`` lines."""
    lines = [f"{key} = {value}" for key, value in sorted(items.items())]
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return digest[:12]


def export_to_csv(frame, filename, stamp=None, float_format="%.10g"):
    """Write a frame as comma-separated text, optionally behind a provenance line."""
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        if stamp is not None:
            f.write(provenance_line(*stamp))
        frame.to_csv(f, index=False, float_format=float_format, lineterminator="\n")
    logger.debug("wrote %d rows to %s", len(frame), path)
    return path


def read_exported_csv(filename, **kwargs):
    return pd.read_csv(filename, comment="#", **kwargs)


def export_to_json(payload, filename, stamp=None):
    path = Path(filename)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dict(payload)
    if stamp is not None:
        data["seed"], data["config_hash"] = stamp
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_stamp(filename):
    """Return (seed, config_hash) from a stamped CSV, or None."""
    with open(filename) as f:
        first = f.readline().strip()
    if not first.startswith("#"):
        return None
    fields = dict(part.split("=", 1) for part in first[1:].split() if "=" in part)
    return int(fields["seed"]), fields["config_hash"]


def open_artifact(filename):
    """Text handle on a CSV artifact, positioned after its provenance line."""
    handle = open(filename, newline="")
    first = handle.readline()
    if not first.startswith("#"):
        handle.seek(0)
    return handle
