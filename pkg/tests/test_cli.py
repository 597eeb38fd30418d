import io
import json
import math

import pytest

from precdca import cli
from precdca import io as pio


def _write_cfg(path, **over):
    cfg = {"schema": 1, "name": "t",
           "problem": {"type": "scad", "m": 20, "k": 40, "sparsity": 4},
           "algorithms": ["npdcae_nls"], "profile": "scad",
           "termination": {"rule": "rel_change", "tolerances": [1e-6]},
           "max_iter": 500, "seed": 0}
    cfg.update(over)
    path.write_text(json.dumps(cfg))
    return path


def _strip_timing(out):
    """File contents with wall-clock fields removed."""
    files = {}
    for p in sorted(out.iterdir()):
        if p.name == "report.json":
            doc = json.loads(p.read_text())
            for c in doc["cells"]:
                c.pop("wall_time", None)
            doc["meta"]["problem"].pop("weight_build_time", None)
            files[p.name] = doc
        elif p.name.endswith("_rate.csv"):
            files[p.name] = p.read_text()
        else:
            tr = pio.read_trace(p.read_text())
            files[p.name] = pio.write_trace(tr, timing=False)
    return files


def test_smoke_config(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["run", "smoke.json", "--out", str(out)])
    assert code == 0
    doc = pio.read_report((out / "report.json").read_text())
    assert len(doc["cells"]) == 1
    assert (out / "npdcae_nls_rel_change_1e-08.csv").exists()


def test_grid_shape(tmp_path):
    algs = ["npdcae_nls", "pdcae_nls", "pdca", "dca", "pdcae_fixed"]
    tols = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]
    cfg = _write_cfg(tmp_path / "grid.json", algorithms=algs,
                     termination={"rule": "rel_change", "tolerances": tols})
    out = tmp_path / "o"
    assert cli.run(cfg, out, stream=io.StringIO()) == 0
    doc = pio.read_report((out / "report.json").read_text())
    assert len(doc["cells"]) == 30
    assert {(c["algorithm"], c["tol"]) for c in doc["cells"]} == \
        {(a, t) for a in algs for t in tols}
    assert len(list(out.glob("*.csv"))) == 30


def test_gl_dice_config(tmp_path):
    cfg = _write_cfg(
        tmp_path / "gl.json",
        problem={"type": "graph_gl", "synthetic": {"size": 32, "noise": 0.1},
                 "tau": 10.0, "gamma": 10.0, "box": 9, "patch": 3,
                 "kappa": 0.45},
        algorithms=["npdcae_nls", "pdca"], profile="gl",
        precond={"kind": "jacobi", "sweeps": 5},
        termination={"rule": "dice_bound", "tolerances": [0.985]},
        max_iter=3000)
    out = tmp_path / "o"
    assert cli.run(cfg, out, stream=io.StringIO()) == 0
    doc = pio.read_report((out / "report.json").read_text())
    for c in doc["cells"]:
        assert c["status"] == "CONVERGED"
        assert isinstance(c["iter"], int)
        assert c["dice"] >= 0.985


@pytest.mark.parametrize("over", [
    {"schema": 2},
    {"algorithms": ["newton"]},
    {"algorithms": []},
    {"termination": {"rule": "rel_change", "tolerances": [-1.0]}},
    {"termination": {"rule": "never", "tolerances": [1e-3]}},
    {"overrides": {"zeta": 1.0}},
    {"overrides": {"eta": -1.0}},
    {"problem": {"type": "lasso"}},
    {"problem": {"type": "scad", "m": 5}},
    {"problem": {"type": "scad", "data": "missing.svm"}},
    {"precond": {"kind": "bogus"}},
    {"bogus": 1},
    {"max_iter": 0},
])
def test_config_errors(tmp_path, over, capsys):
    cfg = _write_cfg(tmp_path / "bad.json", **over)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_and_malformed_config(tmp_path):
    assert cli.run(tmp_path / "nope.json", tmp_path / "o") == 2
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert cli.run(p, tmp_path / "o") == 2


def test_bad_workers(tmp_path):
    cfg = _write_cfg(tmp_path / "c.json")
    assert cli.main(["run", str(cfg), "--workers", "0"]) == 2


def test_malformed_libsvm_is_config_error(tmp_path):
    (tmp_path / "d.svm").write_text("1 2:1 1:1\n")
    cfg = _write_cfg(tmp_path / "c.json",
                     problem={"type": "scad", "data": "d.svm"})
    assert cli.run(cfg, tmp_path / "o") == 2


def test_nan_exit_code(tmp_path):
    # an overflowing feature turns the first energy into NaN
    (tmp_path / "d.svm").write_text("1 1:1e200 2:1\n-1 1:1 2:1e-3\n1 2:2\n")
    cfg = _write_cfg(tmp_path / "c.json",
                     problem={"type": "scad", "data": "d.svm"},
                     algorithms=["npdcae_nls", "pdca"])
    out = tmp_path / "o"
    assert cli.run(cfg, out, stream=io.StringIO()) == 3
    doc = pio.read_report((out / "report.json").read_text())
    assert {c["status"] for c in doc["cells"]} == {"NAN_ABORT"}


def test_deterministic_and_worker_independent(tmp_path):
    cfg = _write_cfg(tmp_path / "c.json",
                     algorithms=["npdcae_nls", "pdcae_nls", "pdca"],
                     termination={"rule": "rel_change",
                                  "tolerances": [1e-4, 1e-7]})
    runs = []
    for i, w in enumerate([1, 1, 3]):
        out = tmp_path / f"o{i}"
        assert cli.run(cfg, out, workers=w, stream=io.StringIO()) == 0
        runs.append(_strip_timing(out))
    assert runs[0] == runs[1] == runs[2]


def test_seed_override(tmp_path):
    cfg = _write_cfg(tmp_path / "c.json")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(cfg), "--out", str(a), "--seed", "5"]) == 0
    assert cli.main(["run", str(cfg), "--out", str(b)]) == 0
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    assert ra["meta"]["seed"] == 5 and rb["meta"]["seed"] == 0
    assert ra["cells"][0]["final_energy"] != rb["cells"][0]["final_energy"]


@pytest.fixture(scope="module")
def rate_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("rate")
    cfg = _write_cfg(tmp / "r.json", algorithms=["npdcae_nls", "pdcae_nls"],
                     termination={"rule": "step_norm", "tolerances": [1e-9]},
                     max_iter=5000, rate_data=True)
    out = tmp / "o"
    assert cli.run(cfg, out, stream=io.StringIO()) == 0
    return out


class TestRatePlotCommand:

    def test_rate_files_share_schema(self, rate_run):
        heads = set()
        for alg in ["npdcae_nls", "pdcae_nls"]:
            text = (rate_run / f"{alg}_step_norm_1e-09_rate.csv").read_text()
            heads.add(text.splitlines()[0])
        assert heads == {"n,log10_dist,log10_gap,not_converged"}

    def test_command_matches_written_file(self, rate_run, tmp_path):
        trace = rate_run / "npdcae_nls_step_norm_1e-09.csv"
        dest = tmp_path / "rows.csv"
        assert cli.main(["rate-plot", str(trace), "--out", str(dest)]) == 0
        written = (rate_run / "npdcae_nls_step_norm_1e-09_rate.csv").read_text()
        assert dest.read_text() == written
        buf = io.StringIO()
        assert cli.rate_plot(trace, stream=buf) == 0
        assert buf.getvalue() == written
        rows = [ln.split(",") for ln in written.splitlines()[1:]]
        assert all(r[3] == "0" for r in rows)
        assert all(math.isfinite(float(r[1])) for r in rows[:-1])

    def test_warns_without_distances(self, tmp_path):
        cfg = _write_cfg(tmp_path / "c.json", max_iter=3)
        out = tmp_path / "o"
        assert cli.run(cfg, out, stream=io.StringIO()) == 0
        trace = out / "npdcae_nls_rel_change_1e-06.csv"
        with pytest.warns(RuntimeWarning) as rec:
            assert cli.rate_plot(trace, stream=io.StringIO()) == 0
        msgs = " ".join(str(w.message) for w in rec)
        assert "did not converge" in msgs and "no distances" in msgs

    def test_bad_trace_file(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("not a trace\n")
        assert cli.rate_plot(p) == 2
        assert cli.rate_plot(tmp_path / "none.csv") == 2
