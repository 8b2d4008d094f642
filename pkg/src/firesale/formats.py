"""File formats: system CSV, JSON configuration documents, numeric formatting.

Numbers are written with 12 significant digits.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import InputError
from .model import FiniteSystem, PriceImpact, SalesFunction

__all__ = ["fmt", "num", "load_system_csv", "load_config", "config_schema", "dump_json"]

SIG = 12


def fmt(x):
    """12-significant-digit text for CSV cells."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{SIG}g}"


def num(x):
    """Round to 12 significant digits for JSON; non-finite values become strings."""
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return float(f"{x:.{SIG}g}")


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def load_system_csv(path, sales: SalesFunction, impact_spec=None):
    """Read ``id,x_1..x_M,c,l`` into a :class:`FiniteSystem`.

    Rows whose holdings are all zero are dropped; ``dropped_rows`` on the result
    counts them. Errors name the offending row id and column.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise InputError(f"cannot open system file {str(path)!r}: {e.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError("system file is empty") from None
        for col in ("id", "c", "l"):
            if col not in header:
                raise InputError(f"missing column {col!r} in system file header", field=col)
        xcols = []
        m = 1
        while f"x_{m}" in header:
            xcols.append(header.index(f"x_{m}"))
            m += 1
        if not xcols:
            raise InputError("system file has no holdings columns x_1..x_M", field="x_1")
        extra = [h for h in header if h not in ("id", "c", "l") and not h.startswith("x_")]
        if extra or len([h for h in header if h.startswith("x_")]) != len(xcols):
            raise InputError(f"unexpected columns in system header: {extra or header}")
        ic, il, iid = header.index("c"), header.index("l"), header.index("id")
        ids, rows, caps, losses = [], [], [], []
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not v.strip() for v in rec):
                continue
            if len(rec) != len(header):
                raise InputError(f"expected {len(header)} fields, found {len(rec)} (line {line})",
                                 row=rec[iid] if len(rec) > iid else line)
            rid = rec[iid].strip()

            def val(j, name):
                try:
                    v = float(rec[j])
                except ValueError:
                    raise InputError(f"not a number: {rec[j]!r}", row=rid, field=name) from None
                if not math.isfinite(v) or v < 0:
                    raise InputError(f"value must be a non-negative decimal: {rec[j]!r}", row=rid, field=name)
                return v

            x = [val(j, f"x_{k + 1}") for k, j in enumerate(xcols)]
            c = val(ic, "c")
            if c == 0:
                raise InputError("capital must be strictly positive", row=rid, field="c")
            ids.append(rid)
            rows.append(x)
            caps.append(c)
            losses.append(val(il, "l"))
    if not rows:
        raise InputError("system file has no institutions")
    M = len(xcols)
    impact = PriceImpact.from_dict(impact_spec or {"kind": "linear"}, M=M)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sys = FiniteSystem.from_arrays(rows, caps, losses, sales, impact, ids=ids)
    for w in caught:
        warnings.warn(w.message, stacklevel=2)
    if sys.n == 0:
        raise InputError("all institutions have zero holdings")
    return sys


def config_schema():
    return json.loads(resources.files("firesale").joinpath("schema/config.schema.json").read_text())


def load_config(path):
    """Parse and validate a JSON configuration document; relative paths resolve
    against the document's directory (stored under ``_base``)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise InputError(f"cannot read config {str(path)!r}: {e.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"config is not valid JSON: {e.msg} (line {e.lineno})") from None
    validate_config(cfg)
    cfg["_base"] = str(path.parent)
    return cfg


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, config_schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise InputError(f"invalid config at {where}: {e.message}") from None
