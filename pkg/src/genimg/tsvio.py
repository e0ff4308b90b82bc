"""TSV helpers shared by every stage.

Files start with one provenance line (``## genimg <version> seed=... config=...``)
followed by a normal tab-separated table. Readers skip every ``##`` line.
"""
from __future__ import annotations

import hashlib
import io
import json
import os

import numpy as np
import pandas as pd

from . import __version__
from .errors import DataError


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance_line(seed=None, config=None):
    return f"## genimg {__version__} seed={seed} config={config_hash(config or {})}\n"


def write_table(path, frame: pd.DataFrame, seed=None, config=None):
    buf = io.StringIO()
    buf.write(provenance_line(seed, config))
    frame.to_csv(buf, sep="\t", index=False, na_rep="NA", lineterminator="\n")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_table(path, **kwargs):
    if not os.path.exists(path):
        raise DataError(f"missing input file: expected {path}")
    with open(path) as fh:
        skip = 0
        for line in fh:
            if not line.startswith("##"):
                break
            skip += 1
    return pd.read_csv(path, sep="\t", skiprows=skip, na_values=["NA"], keep_default_na=False,
                       float_precision="round_trip", **kwargs)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def directory_fingerprint(paths):
    """Digest over the content of ``paths`` (sorted, directories walked)."""
    files = []
    for p in paths:
        if os.path.isdir(p):
            for root, _, names in os.walk(p):
                files.extend(os.path.join(root, n) for n in names)
        elif os.path.exists(p):
            files.append(p)
        else:
            raise DataError(f"missing input file: expected {p}")
    h = hashlib.sha256()
    for f in sorted(files):
        h.update(os.path.basename(f).encode())
        h.update(file_digest(f).encode())
    return h.hexdigest()[:16]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def read_json(path):
    if not os.path.exists(path):
        raise DataError(f"missing input file: expected {path}")
    with open(path) as fh:
        return json.load(fh)
