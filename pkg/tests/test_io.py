import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from precdca import io as pio
from precdca.solvers import (COLUMNS, IterationRecord, SolverConfig,
                             Termination, Trace, solve)


class TestLibsvm:

    def test_basic_row(self):
        ds = pio.parse_libsvm("+1 1:0.5 3:2.0\n")
        assert ds.shape == (1, 3)
        np.testing.assert_array_equal(ds.X.toarray(), [[0.5, 0.0, 2.0]])
        np.testing.assert_array_equal(ds.labels, [1.0])

    def test_empty(self):
        ds = pio.parse_libsvm("")
        assert ds.shape == (0, 0) and ds.labels.size == 0

    @pytest.mark.parametrize("text, line", [
        ("1 2:1 1:1", 1),
        ("1 1:1\n1 0:2", 2),
        ("1 1:x", 1),
        ("1 3", 1),
        ("2 1:1", 1),
        ("+1 1:1\nfoo 1:1", 2),
        ("1 1:1 1:2", 1),
    ])
    def test_errors(self, text, line):
        with pytest.raises(pio.ParseError) as exc:
            pio.parse_libsvm(text)
        assert exc.value.line == line

    def test_labels_comments_and_bytes(self):
        ds = pio.parse_libsvm(b"# header\n0 2:1\n-1 1:3 # tail\n\n+1\n")
        np.testing.assert_array_equal(ds.labels, [-1.0, -1.0, 1.0])
        np.testing.assert_array_equal(ds.X.toarray(),
                                      [[0, 1], [3, 0], [0, 0]])

    def test_load(self, tmp_path):
        p = tmp_path / "d.svm"
        p.write_text("1 1:2\n")
        ds = pio.load_libsvm(p)
        assert ds.source == str(p) and ds.shape == (1, 1)


_row = st.tuples(
    st.sampled_from(["+1", "1", "-1", "0"]),
    st.lists(st.tuples(st.integers(1, 40),
                       st.floats(-1e6, 1e6, allow_nan=False)),
             max_size=8, unique_by=lambda t: t[0]))


def _naive(lines):
    rows = []
    for lab, feats in lines:
        rows.append((1.0 if lab in ("+1", "1") else -1.0,
                     dict(sorted(feats))))
    k = max([max(f) for _, f in rows if f] + [0])
    X = np.zeros((len(rows), k))
    for i, (_, f) in enumerate(rows):
        for j, v in f.items():
            X[i, j - 1] = v
    return np.array([r[0] for r in rows]), X


@settings(max_examples=1000, deadline=None)
@given(_row)
def test_libsvm_matches_naive_parser(row):
    lab, feats = row
    feats = sorted(feats)
    text = lab + "".join(f" {j}:{v!r}" for j, v in feats) + "\n"
    ds = pio.parse_libsvm(text + text)
    y, X = _naive([(lab, feats), (lab, feats)])
    np.testing.assert_array_equal(ds.labels, y)
    np.testing.assert_array_equal(ds.X.toarray(), X)


class TestPgm:

    def test_single_white_pixel(self):
        assert pio.load_pgm(b"P2\n1 1\n255\n255\n")[0, 0] == 1.0

    def test_mask_gray_is_unlabelled(self):
        prior = pio.load_mask(b"P2\n3 1\n255\n0 128 255\n")
        np.testing.assert_array_equal(prior.lam, [1, 0, 1])
        np.testing.assert_array_equal(prior.y, [-1, 0, 1])

    def test_truncated_binary(self):
        with pytest.raises(pio.ParseError):
            pio.load_pgm(b"P5\n2 2\n255\n" + bytes([1, 2, 3]))

    @pytest.mark.parametrize("data", [b"P3\n1 1\n255\n0\n",
                                      b"P2\n1 1\n255\n300\n",
                                      b"P2\n2 1\n255\n1\n",
                                      b"P2\n1 1\n"])
    def test_malformed(self, data):
        with pytest.raises(pio.ParseError):
            pio.load_pgm(data)

    @pytest.mark.parametrize("maxval", [255, 1023, 65535])
    @pytest.mark.parametrize("binary", [True, False])
    def test_round_trip(self, maxval, binary, rng):
        q = rng.integers(0, maxval + 1, (5, 7))
        img = q / maxval
        back = pio.load_pgm(pio.write_pgm(img, maxval, binary))
        np.testing.assert_array_equal(np.rint(back * maxval), q)

    def test_comments_in_header(self):
        img = pio.load_pgm(b"P2\n# c\n2 1 # w h\n4\n0 4\n")
        np.testing.assert_array_equal(img, [[0.0, 1.0]])


def _same_record(a, b):
    for c in COLUMNS:
        va, vb = getattr(a, c), getattr(b, c)
        if isinstance(va, float) and math.isnan(va):
            assert math.isnan(vb)
        else:
            assert va == vb


def _small_trace():
    t = Trace(meta={"E0": 1.0, "status": "CONVERGED", "note": "x"})
    t.records.append(IterationRecord(n=0, E=0.5, A=0.6, lam=0.6, a=2,
                                     trials=(0.7, 0.5), wall=0.25,
                                     dist_ref=0.1, step_norm=1 / 3))
    return t


class TestTrace:

    def test_empty_trace_header_only(self):
        text = pio.write_trace(Trace())
        body = [ln for ln in text.splitlines() if not ln.startswith("#")]
        assert body == [",".join(COLUMNS)]
        assert len(pio.read_trace(text)) == 0

    def test_one_row_round_trip(self):
        t = _small_trace()
        text = pio.write_trace(t)
        body = [ln for ln in text.splitlines() if not ln.startswith("#")]
        assert len(body) == 2
        back = pio.read_trace(text)
        _same_record(back.records[0], t.records[0])
        assert back.meta == t.meta

    def test_round_trip_solver_trace(self, small_scad):
        _, prob = small_scad
        rep = solve(prob, SolverConfig(termination=Termination("step_norm",
                                                               1e-8)))
        text = pio.write_trace(rep.trace)
        back = pio.read_trace(io.StringIO(text))
        assert len(back) == len(rep.trace)
        for a, b in zip(rep.trace.records, back.records):
            _same_record(a, b)
        assert pio.write_trace(back) == text

    def test_timing_blanked(self):
        text = pio.write_trace(_small_trace(), timing=False)
        assert "0.25" not in text
        assert math.isnan(pio.read_trace(text).records[0].wall)

    @pytest.mark.parametrize("text", [
        "# schema=2\n" + ",".join(COLUMNS) + "\n",
        "# schema=1\nn,E\n",
        "# schema=1\n",
        "# schema\n",
    ])
    def test_bad_traces(self, text):
        with pytest.raises(pio.ParseError):
            pio.read_trace(text)

    def test_non_increasing_rows(self):
        t = _small_trace()
        t.records.append(t.records[0])
        with pytest.raises(pio.ParseError):
            pio.read_trace(pio.write_trace(t))


class TestRatePlot:

    def test_single_row(self):
        rows = pio.rate_plot_rows(_small_trace())
        assert rows == [(1, -1.0, -math.inf, 0)]
        text = pio.write_rate_plot(_small_trace())
        assert text.splitlines() == ["n,log10_dist,log10_gap,not_converged",
                                     "1,-1.0,-inf,0"]

    def test_flags_unconverged_and_missing(self):
        t = Trace(meta={"status": "MAX_ITER"},
                  records=[IterationRecord(n=0, E=2.0),
                           IterationRecord(n=1, E=1.0)])
        rows = pio.rate_plot_rows(t)
        assert all(r[3] == 1 for r in rows)
        assert math.isnan(rows[0][1])
        assert rows[0][2] == 0.0

    def test_converged_toy_distances_decrease(self, small_scad):
        _, prob = small_scad
        cfg = SolverConfig(termination=Termination("step_norm", 1e-9))
        ref = solve(prob, cfg)
        rep = solve(prob, cfg, reference=ref.x)
        rows = pio.rate_plot_rows(rep.trace)
        dist = np.array([r[1] for r in rows])[rep.n0:-1]
        assert np.all(np.diff(dist) < 0)


class TestReport:

    def test_six_cells(self, small_scad):
        _, prob = small_scad
        cells = []
        for alg in ["npdcae_nls", "pdca"]:
            for tol in [1e-3, 1e-4, 1e-5]:
                rep = solve(prob, SolverConfig(
                    algorithm=alg, termination=Termination("rel_change", tol),
                    max_iter=30))
                cells.append(pio.report_cell(alg, tol, rep))
        text = pio.write_report(cells, {"seed": 0, "x": math.inf})
        doc = pio.read_report(text)
        assert doc["schema"] == pio.REPORT_SCHEMA
        assert len(doc["cells"]) == 6
        assert doc["meta"]["x"] is None
        maxed = [c for c in doc["cells"] if c["status"] == "MAX_ITER"]
        assert all(c["iter"] == pio.MAX_ITER_SENTINEL for c in maxed)
        assert json.loads(text) == doc

    def test_bad_schema(self):
        with pytest.raises(pio.ParseError):
            pio.read_report('{"schema": 99, "cells": []}')
