import json
import subprocess
import sys
import time

import numpy as np
import pytest

from mvspectra.cli import main, slice_indices
from mvspectra.csd import estimate_csd
from mvspectra.dft import gaussian_kernel
from mvspectra.io import STUDY_COLUMNS, read_array_field, read_field, read_metadata, read_spectrum, \
    write_field, write_spectrum
from mvspectra.lattice import MultiField, center, embed
from test_factor import planted


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def fail(capsys, *argv):
    with pytest.raises(SystemExit) as exc:
        main([str(a) for a in argv])
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return exc.value.code, json.loads(err)


def test_simulate_rows_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "simulate", "--p", 2, "--grid", "16,16", "--seed", 7, "--out", a)[0] == 0
    run(capsys, "simulate", "--p", 2, "--grid", "16,16", "--seed", 7, "--out", b)
    rows = [ln for ln in a.read_text().splitlines() if not ln.startswith("#")]
    assert len(rows) == 1 + 512
    assert a.read_bytes() == b.read_bytes()
    meta = read_metadata(a)
    assert meta["config"]["seed"] == 7 and "version" in meta


def test_simulate_missing_fraction(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(capsys, "simulate", "--grid", "8,8", "--missing-frac", 0, "--out", a)
    run(capsys, "simulate", "--grid", "8,8", "--missing-frac", 0.25, "--out", b)
    assert read_field(a).n == 128
    fb = read_field(b)
    assert fb.n == 96 and fb.values.shape == (2, 8, 8)
    # the same seed gives the same underlying field
    fa = read_field(a)
    np.testing.assert_array_equal(fa.values[fb.mask], fb.values[fb.mask])


def test_usage_errors(tmp_path, capsys):
    code, err = fail(capsys, "simulate", "--grid", "0,4", "--out", tmp_path / "x.csv")
    assert code == 2 and err["status"] == "error"
    code, err = fail(capsys, "simulate", "--missing-frac", 1.5, "--out", tmp_path / "x.csv")
    assert code == 2 and "missing-frac" in err["message"]
    code, _ = fail(capsys, "estimate", tmp_path / "nope.csv", "--out", tmp_path / "s.csv")
    assert code == 2
    code, _ = fail(capsys, "bogus")
    assert code == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("nonsense\n")
    code, err = fail(capsys, "estimate", bad, "--out", tmp_path / "s.csv")
    assert code == 2 and "FormatError" in err["message"]


def test_runtime_failure_exit_one(tmp_path, capsys):
    path = tmp_path / "const.csv"
    write_field(path, MultiField.from_observations(np.ones((2, 4, 4))))
    code, err = fail(capsys, "estimate", path, "--out", tmp_path / "s.csv", "--tau", 1.0)
    assert code == 1 and err["code"] == 1


def test_estimate_complete_round_trip(tmp_path, capsys):
    fpath, spath = tmp_path / "f.csv", tmp_path / "s.csv"
    run(capsys, "simulate", "--grid", "6,6", "--seed", 3, "--out", fpath)
    code, out, _ = run(capsys, "estimate", fpath, "--out", spath, "--tau", 1.0, "--bandwidth", 0.3)
    assert code == 0 and json.loads(out)["status"] == "ok"
    f, meta = read_spectrum(spath)
    centred, _ = center(embed(read_field(fpath), 1.0))
    direct = estimate_csd(centred, gaussian_kernel((6, 6), 0.3))
    np.testing.assert_array_equal(f.mats, direct.spectrum.mats)
    assert meta["converged"] is True and meta["config"]["tau"] == 1.0
    assert len(meta["mu_hat"]) == 2


def test_estimate_and_decompose_incomplete(tmp_path, capsys):
    fpath, spath, out = tmp_path / "f.csv", tmp_path / "s.csv", tmp_path / "dec"
    run(capsys, "simulate", "--grid", "8,8", "--seed", 1, "--missing-frac", 0.2, "--out", fpath)
    run(capsys, "estimate", fpath, "--out", spath, "--burn-in", 2, "--epsilon", 0.1)
    f, meta = read_spectrum(spath)
    assert f.sizes == (10, 10)
    assert f.min_eigenvalue().min() > 0
    code, text, _ = run(capsys, "decompose", spath, fpath, "--J", 1, 2, "--out-dir", out)
    assert code == 0
    pct = [float(v.rstrip("%")) for v in text.splitlines()[-1].split()[1:]]
    assert pct[0] <= pct[1] + 1e-9 and pct[1] == pct[2]
    for name in ("factor_J1_W1.csv", "factor_J2_W1.csv", "factor_J2_W2.csv", "factor_table.csv"):
        assert (out / name).exists()
    assert read_array_field(out / "factor_J2_W2.csv").shape == (8, 8)
    rec = read_field(out / "reconstruction_J1.csv")
    assert rec.values.shape == (2, 8, 8) and rec.mask.all()
    table = (out / "factor_table.csv").read_text().splitlines()
    assert table[1] == "component,J1_A1,J2_A1,J2_A2"
    for col in range(1, 4):
        loads = [float(r.split(",")[col]) for r in table[2:4]]
        first = next(v for v in loads if abs(v) > 1e-12)
        assert first > 0


def test_decompose_rank_one_and_bad_J(tmp_path, capsys):
    A = np.array([0.28, 0.96])
    f, _ = planted((6, 6), A, noise=1e-4)
    spath, fpath = tmp_path / "s.csv", tmp_path / "f.csv"
    write_spectrum(spath, f)
    write_field(fpath, MultiField.from_observations(np.random.default_rng(0).standard_normal((2, 6, 6))))
    code, text, _ = run(capsys, "decompose", spath, fpath, "--J", 1, "--out-dir", tmp_path / "o")
    assert float(text.splitlines()[-1].split()[1].rstrip("%")) > 99
    code, err = fail(capsys, "decompose", spath, fpath, "--J", 3, "--out-dir", tmp_path / "o")
    assert code == 2


def test_coherence_slices(tmp_path, capsys):
    fpath, spath, cpath = tmp_path / "f.csv", tmp_path / "s.csv", tmp_path / "c.csv"
    run(capsys, "simulate", "--p", 3, "--grid", "6,6", "--out", fpath)
    run(capsys, "estimate", fpath, "--out", spath, "--tau", 1.0)
    assert run(capsys, "coherence", spath, "--out", cpath)[0] == 0
    lines = [ln for ln in cpath.read_text().splitlines() if not ln.startswith("#")]
    assert lines[0] == "slice,omega1,omega2,j,k,re,im"
    recs = {}
    for ln in lines[1:]:
        label, rest = ln[1:].split('"', 1)
        vals = rest.lstrip(",").split(",")
        recs[(label, int(vals[2]), int(vals[3]))] = (float(vals[4]), float(vals[5]))
    assert len(recs) == 9 * 9
    for (label, j, k), (re, im) in recs.items():
        if j == k:
            assert re == pytest.approx(1.0) and abs(im) < 1e-12
        re2, im2 = recs[(label, k, j)]
        assert re == pytest.approx(re2) and im == pytest.approx(-im2, abs=1e-15)
        assert np.hypot(re, im) <= 1 + 1e-8
    assert slice_indices(["low", "mid", "high"], (6, 8, 5)) == (0, 2, 2)
    assert slice_indices(["mid"], (14,)) == (3,)


def test_coherence_errors(tmp_path, capsys):
    fpath, spath = tmp_path / "f.csv", tmp_path / "s.csv"
    run(capsys, "simulate", "--grid", "4,4", "--out", fpath)
    run(capsys, "estimate", fpath, "--out", spath, "--tau", 1.0)
    assert fail(capsys, "coherence", spath, "--index", "4,0", "--out", tmp_path / "c.csv")[0] == 2
    assert fail(capsys, "coherence", spath, "--slices", "low,top", "--out", tmp_path / "c.csv")[0] == 2
    assert run(capsys, "coherence", spath, "--index", "1,2", "--out", tmp_path / "c.csv")[0] == 0


def test_study_smoke_and_workers(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    t0 = time.perf_counter()
    code, out, _ = run(capsys, "study", "--replicates", 1, "--out", a)
    assert time.perf_counter() - t0 < 60
    assert code == 0
    header = [ln for ln in a.read_text().splitlines() if not ln.startswith("#")][0]
    assert header == ",".join(STUDY_COLUMNS)
    summary = [json.loads(ln) for ln in out.splitlines()]
    assert {s["tau"] for s in summary} == {1.0, 1.25}
    assert read_metadata(a)["config"]["ml_start"] == "empirical"
    args = ["study", "--replicates", 3, "--grid", "8,8", "--burn-in", 2, "--epsilon", 0.1, "--seed", 4]
    run(capsys, *args, "--workers", 1, "--out", a)
    run(capsys, *args, "--workers", 3, "--out", b)

    def norms(path):
        return [ln.split(",")[6] for ln in path.read_text().splitlines()[2:]]
    assert norms(a) == norms(b)


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mvspectra.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
