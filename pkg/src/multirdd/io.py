"""Reading samples and JSON documents, writing result documents."""
from __future__ import annotations

import csv
import json
import math

import numpy as np

from .core import CounterfactualSpec, CutoffSchedule, Sample
from .errors import MissingColumn, RDDValidationError

SCHEMA_VERSION = 1


def read_sample_csv(path, require_d=False):
    """Load a CSV with header ``y,x`` and optional ``d`` column."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise RDDValidationError(f"cannot open data file {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise RDDValidationError(f"data file {path} is empty") from None
        for col in ("y", "x") + (("d",) if require_d else ()):
            if col not in header:
                raise MissingColumn(col)
        pos = {h: i for i, h in enumerate(header)}
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not v.strip() for v in row):
                continue
            try:
                rows.append([float(row[pos[c]]) for c in ("y", "x", "d") if c in pos])
            except (ValueError, IndexError):
                raise RDDValidationError(f"{path}:{lineno}: malformed row") from None
    if not rows:
        raise RDDValidationError(f"data file {path} has no observations")
    arr = np.array(rows)
    d = arr[:, 2] if "d" in pos else None
    return Sample(arr[:, 0], arr[:, 1], d)


def write_sample_csv(path, sample):
    cols = [sample.y, sample.x] + ([sample.d] if sample.d is not None else [])
    names = ["y", "x"] + (["d"] if sample.d is not None else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise RDDValidationError(f"cannot open {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise RDDValidationError(f"{path} is not valid JSON: {exc}") from None


def schedule_from_dict(doc):
    """Schedule from ``{"cutoffs": [[c, d_lo, d_hi], ...], "domain": [lo, hi]}``.

    ``{"c": [...], "doses": [...], "domain": [...]}`` is accepted as well.
    """
    try:
        dom = doc["domain"]
        if "cutoffs" in doc:
            return CutoffSchedule(tuple(tuple(t) for t in doc["cutoffs"]), tuple(dom))
        return CutoffSchedule.from_doses(doc["c"], doc["doses"], tuple(dom))
    except KeyError as exc:
        raise RDDValidationError(f"schedule document lacks field {exc}") from None
    except TypeError as exc:
        raise RDDValidationError(f"malformed schedule document: {exc}") from None


def schedule_to_dict(schedule):
    return {"cutoffs": [list(t) for t in schedule.cutoffs], "domain": list(schedule.domain)}


def counterfactual_from_dict(doc):
    """``{"kind": "discrete", "weights": [...]}`` or a continuous uniform spec.

    Continuous documents carry ``profile`` and ``support``; each support
    entry is ``[lo, hi]`` or a number for a fixed coordinate.  The density
    is uniform over the integrated coordinates.
    """
    kind = doc.get("kind")
    if kind == "discrete":
        if "weights" not in doc:
            raise RDDValidationError("discrete counterfactual lacks 'weights'")
        return CounterfactualSpec.discrete(doc["weights"])
    if kind == "continuous":
        dens = doc.get("density", "uniform")
        if dens != "uniform":
            raise RDDValidationError("only uniform densities can be given in JSON")
        try:
            return CounterfactualSpec.uniform(doc["profile"], doc["support"])
        except KeyError as exc:
            raise RDDValidationError(f"continuous counterfactual lacks field {exc}") from None
    raise RDDValidationError(f"unknown counterfactual kind {kind!r}")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps(doc):
    """Serialise a result document; reals round-trip exactly."""
    out = {"schema_version": SCHEMA_VERSION}
    out.update(_clean(doc))
    return json.dumps(out, indent=2, sort_keys=False)


def flat_csv(doc, keys):
    """One header line and one row with the requested scalar or list fields."""
    import io as _io

    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    row = []
    for k in keys:
        v = doc.get(k)
        if isinstance(v, (list, tuple)):
            v = ";".join(repr(float(x)) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        row.append(v)
    w.writerow(row)
    return buf.getvalue()
