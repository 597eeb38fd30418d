"""Data ingestion and result serialization.

* LIBSVM text (``<label> <idx>:<val> ...``, 1-based indices)
* PGM images (P2 ASCII and P5 binary, maxval up to 65535) and prior masks
* trace CSV files and JSON reports
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import re
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = ["ParseError", "Dataset", "parse_libsvm", "load_libsvm",
           "load_pgm", "load_mask", "write_pgm", "write_trace",
           "read_trace", "report_cell", "write_report", "read_report",
           "rate_plot_rows", "write_rate_plot", "TRACE_SCHEMA",
           "REPORT_SCHEMA", "MAX_ITER_SENTINEL"]

TRACE_SCHEMA = 1
REPORT_SCHEMA = 1
MAX_ITER_SENTINEL = "---"


class ParseError(ValueError):
    """Malformed input; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


# ---------------------------------------------------------------- LIBSVM


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sparse design ``X`` (m x k, CSR), labels in {-1, +1}."""

    X: sp.csr_matrix
    labels: np.ndarray
    source: str = ""

    @property
    def shape(self):
        return self.X.shape


def _label(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"non-numeric label {tok!r}", lineno) from None
    if v == 0.0 or v == -1.0:
        return -1.0
    if v == 1.0:
        return 1.0
    raise ParseError(f"label {tok!r} is not binary", lineno)


def parse_libsvm(stream, source=""):
    """Parse LIBSVM text.

    Parameters
    ----------
    stream : str, bytes or text file object
    source : str
        Recorded in the returned :class:`Dataset`.

    Returns
    -------
    Dataset
        ``k`` is the largest index seen; labels 0 map to -1.

    Raises
    ------
    ParseError
        With the offending line number.
    """
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        stream = _io.StringIO(stream)
    indptr, indices, data, labels = [0], [], [], []
    k = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        labels.append(_label(toks[0], lineno))
        last = 0
        for tok in toks[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise ParseError(f"expected index:value, got {tok!r}", lineno)
            try:
                j = int(idx)
                v = float(val)
            except ValueError:
                raise ParseError(f"non-numeric token {tok!r}", lineno) from None
            if j < 1:
                raise ParseError(f"index {j} is not 1-based", lineno)
            if j <= last:
                raise ParseError("indices not increasing", lineno)
            last = j
            indices.append(j - 1)
            data.append(v)
        k = max(k, last)
        indptr.append(len(indices))
    X = sp.csr_matrix((np.asarray(data, float), np.asarray(indices, np.int64),
                       np.asarray(indptr, np.int64)), shape=(len(labels), k))
    return Dataset(X, np.asarray(labels, float), source)


def load_libsvm(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_libsvm(fh, source=str(path))


# ------------------------------------------------------------------- PGM

_WS = b" \t\r\n\v\f"


def _pgm_tokens(buf, count, pos):
    """Read `count` header integers starting at `pos`, skipping comments."""
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header")
        tok = bytes(buf[start:pos])
        if not tok.isdigit():
            raise ParseError(f"bad PGM header token {tok!r}")
        out.append(int(tok))
    return out, pos


def _read_pgm_raw(data):
    if isinstance(data, str):
        data = data.encode("ascii")
    buf = bytes(data)
    magic = buf[:2]
    if magic not in (b"P2", b"P5"):
        raise ParseError(f"bad PGM magic {magic!r}")
    (w, h, maxval), pos = _pgm_tokens(buf, 3, 2)
    if w < 1 or h < 1:
        raise ParseError("PGM dimensions must be positive")
    if not 0 < maxval <= 65535:
        raise ParseError(f"PGM maxval {maxval} out of range")
    npx = w * h
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        width = 1 if maxval < 256 else 2
        payload = buf[pos:pos + npx * width]
        if len(payload) < npx * width:
            raise ParseError("PGM payload shorter than the image")
        vals = np.frombuffer(payload, dtype=">u2" if width == 2 else np.uint8)
        vals = vals.astype(np.int64)
    else:
        toks = re.sub(rb"#[^\r\n]*", b" ", buf[pos:]).split()
        if len(toks) < npx:
            raise ParseError("PGM payload shorter than the image")
        try:
            vals = np.array([int(t) for t in toks[:npx]], dtype=np.int64)
        except ValueError:
            raise ParseError("non-numeric PGM pixel") from None
    if np.any(vals > maxval) or np.any(vals < 0):
        raise ParseError("PGM pixel exceeds maxval")
    return vals.reshape(h, w), maxval


def load_pgm(data):
    """Decode a P2/P5 image to floats in [0, 1] (value / maxval)."""
    vals, maxval = _read_pgm_raw(data)
    return vals.astype(float) / maxval


def load_mask(data):
    """Prior labels from a PGM mask.

    White (maxval) gives ``y = +1``, black gives ``y = -1``, any other
    value leaves the pixel unlabelled.
    """
    from precdca.graphgl import PriorLabels
    vals, maxval = _read_pgm_raw(data)
    v = vals.ravel()
    y = np.where(v == maxval, 1.0, np.where(v == 0, -1.0, 0.0))
    return PriorLabels((y != 0).astype(float), y)


def write_pgm(image, maxval=255, binary=True):
    """Encode values in [0, 1] as PGM bytes (rounded to ``maxval`` levels)."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be two-dimensional")
    if not 0 < maxval <= 65535:
        raise ValueError("maxval out of range")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.int64)
    h, w = q.shape
    if binary:
        head = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
        dt = ">u2" if maxval >= 256 else np.uint8
        return head + q.astype(dt).tobytes()
    rows = "\n".join(" ".join(str(int(v)) for v in row) for row in q)
    return f"P2\n{w} {h}\n{maxval}\n{rows}\n".encode("ascii")


# ----------------------------------------------------------------- traces

_INT_COLUMNS = {"n", "a", "inner_iters"}


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace(trace, stream=None, timing=True):
    """Write a trace as CSV.

    Metadata goes in leading ``# key=<json>`` lines; floats use ``repr``
    so a read-back is bit-exact.  ``timing=False`` blanks the wall-clock
    column (for byte comparisons across runs).

    Returns the CSV text when `stream` is None.
    """
    from precdca.solvers import COLUMNS
    own = stream is None
    if own:
        stream = _io.StringIO(newline="")
    stream.write(f"# schema={TRACE_SCHEMA}\n")
    for key in sorted(trace.meta):
        stream.write(f"# {key}={json.dumps(_jsonable(trace.meta[key]))}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in trace.records:
        row = []
        for c in COLUMNS:
            v = getattr(r, c)
            if c == "trials":
                row.append(";".join(repr(float(t)) for t in v))
            elif c == "wall" and not timing:
                row.append("")
            else:
                row.append(_fmt(v) if c not in _INT_COLUMNS else str(int(v)))
        w.writerow(row)
    if own:
        return stream.getvalue()
    return None


def read_trace(stream):
    """Inverse of :func:`write_trace`; returns a :class:`Trace`."""
    from precdca.solvers import COLUMNS, IterationRecord, Trace
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        stream = _io.StringIO(stream)
    lines = stream.read().splitlines()
    meta = {}
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, sep, val = lines[i][1:].strip().partition("=")
        if not sep:
            raise ParseError("bad metadata line", i + 1)
        if key != "schema":
            meta[key] = json.loads(val)
        elif int(val) != TRACE_SCHEMA:
            raise ParseError(f"unsupported trace schema {val}", i + 1)
        i += 1
    rows = list(csv.reader(lines[i:]))
    if not rows:
        raise ParseError("missing header", i + 1)
    header = rows[0]
    if tuple(header) != COLUMNS:
        raise ParseError("unexpected trace columns", i + 1)
    records = []
    last = -1
    for k, row in enumerate(rows[1:], start=i + 2):
        if len(row) != len(header):
            raise ParseError("wrong number of fields", k)
        kw = {}
        for c, v in zip(header, row):
            if c == "trials":
                kw[c] = tuple(float(t) for t in v.split(";")) if v else ()
            elif c in _INT_COLUMNS:
                kw[c] = int(v)
            elif c == "wall" and v == "":
                kw[c] = math.nan
            else:
                kw[c] = float(v)
        if kw["n"] <= last:
            raise ParseError("iteration numbers not increasing", k)
        last = kw["n"]
        records.append(IterationRecord(**kw))
    return Trace(records=records, meta=meta)


def _log10_floor(v):
    if math.isnan(v):
        return math.nan
    return math.log10(v) if v > 0 else -math.inf


def rate_plot_rows(trace, x_dist=None):
    """Rows ``(n, log10 ||x^n - x_final||, log10 (E(x^n) - E_final), flag)``.

    Distances come from the ``dist_ref`` column unless `x_dist` is given.
    ``flag`` is 1 when the run did not converge.  Non-positive values map
    to ``-inf`` (the floor); missing distances stay NaN.
    """
    E = trace.column("E")
    dist = trace.column("dist_ref") if x_dist is None else np.asarray(x_dist)
    converged = trace.meta.get("status") in ("CONVERGED", "STATIONARY_D_ZERO")
    flag = 0 if converged else 1
    E_final = E[-1] if E.size else math.nan
    rows = []
    for r, e, dd in zip(trace.records, E, dist):
        rows.append((r.n + 1, _log10_floor(dd), _log10_floor(e - E_final),
                     flag))
    return rows


def write_rate_plot(trace, stream=None):
    """CSV with columns ``n, log10_dist, log10_gap, not_converged``."""
    own = stream is None
    if own:
        stream = _io.StringIO(newline="")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("n", "log10_dist", "log10_gap", "not_converged"))
    for n, ld, le, flag in rate_plot_rows(trace):
        w.writerow((n, repr(ld), repr(le), flag))
    return stream.getvalue() if own else None


# ---------------------------------------------------------------- reports


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if not math.isfinite(v) else v
    return v


def report_cell(algorithm, tol, report, rule="rel_change", **extra):
    """Summary of one (algorithm, tolerance) solve for the JSON report."""
    maxed = report.status == "MAX_ITER"
    cell = {"algorithm": algorithm, "rule": rule, "tol": float(tol),
            "status": report.status, "iterations": int(report.iterations),
            "iter": MAX_ITER_SENTINEL if maxed else int(report.iterations),
            "wall_time": float(report.wall_time),
            "n0": int(report.n0), "crit_residual": report.crit_residual,
            "final_energy": (report.trace.records[-1].E
                             if report.trace.records else
                             report.trace.meta.get("E0")),
            "message": report.message}
    cell.update(extra)
    return _jsonable(cell)


def write_report(cells, meta=None, stream=None):
    """Versioned JSON report; non-finite floats become null."""
    doc = {"schema": REPORT_SCHEMA, "meta": _jsonable(meta or {}),
           "cells": [_jsonable(c) for c in cells]}
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if stream is None:
        return text
    stream.write(text)
    return None


def read_report(stream):
    if isinstance(stream, (bytes, str)):
        doc = json.loads(stream)
    else:
        doc = json.load(stream)
    if doc.get("schema") != REPORT_SCHEMA:
        raise ParseError(f"unsupported report schema {doc.get('schema')!r}")
    return doc
