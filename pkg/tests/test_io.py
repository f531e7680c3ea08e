import numpy as np
import pytest

from mvspectra.evaluation import StudyRow
from mvspectra.factor import FactorModel
from mvspectra.io import (STUDY_COLUMNS, FormatError, factor_table, format_factor_table, read_array_field,
                          read_field, read_metadata, read_spectrum, read_study, write_array_field, write_field,
                          write_spectrum, write_study)
from mvspectra.lattice import MultiField
from mvspectra.models import CrossSpectrum, white_noise_spectrum
from test_condsim import coregional_spectrum


def test_field_round_trip_exact(tmp_path, rng):
    vals = rng.standard_normal((3, 4, 5)) * 1e3
    vals[rng.random(vals.shape) < 0.3] = np.nan
    field = MultiField.from_observations(vals)
    path = tmp_path / "f.csv"
    write_field(path, field, note="x")
    back = read_field(path)
    np.testing.assert_array_equal(back.mask, field.mask)
    np.testing.assert_array_equal(back.values[back.mask], field.values[field.mask])
    meta = read_metadata(path)
    assert meta["format"] == "field" and meta["grid"] == [4, 5] and meta["note"] == "x"
    lines = path.read_text().splitlines()
    assert lines[1] == "component,x1,x2,value"
    assert len(lines) == 2 + field.n


def test_field_canonical_order(tmp_path):
    field = MultiField.from_observations(np.arange(12.0).reshape(2, 3, 2))
    path = tmp_path / "f.csv"
    write_field(path, field)
    rows = [ln.split(",") for ln in path.read_text().splitlines()[2:]]
    # first coordinate varies fastest within each component
    assert [r[:3] for r in rows[:4]] == [["1", "1", "1"], ["1", "2", "1"], ["1", "3", "1"], ["1", "1", "2"]]
    assert rows[6][0] == "2"


@pytest.mark.parametrize("body, msg", [
    ("comp,x1,value\n1,1,0.5\n", "header"),
    ("component,x1,value\n1,0,0.5\n", "1-based"),
    ("component,x1,value\n1,1,0.5\n1,1,0.7\n", "duplicate"),
    ("component,x1,value\n1,1.5,0.5\n", "integers"),
    ("component,x1,value\n1,a,0.5\n", "could not convert|bad|invalid"),
])
def test_field_format_errors(tmp_path, body, msg):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(FormatError, match=msg):
        read_field(path)


def test_field_outside_declared_grid(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text('# {"grid": [2], "p": 1}\ncomponent,x1,value\n1,3,0.5\n')
    with pytest.raises(FormatError):
        read_field(path)


def test_spectrum_round_trip_exact(tmp_path, rng):
    f = coregional_spectrum((5, 4))
    f = CrossSpectrum(f.mats + 1e-3j * np.array([[0, 1], [-1, 0]]))
    path = tmp_path / "s.csv"
    write_spectrum(path, f, extra=[1, 2])
    back, meta = read_spectrum(path)
    np.testing.assert_array_equal(back.mats, f.mats)
    assert meta["extra"] == [1, 2] and meta["p"] == 2
    header = path.read_text().splitlines()[1]
    assert header == "i1,i2,re_1_1,im_1_1,re_1_2,im_1_2,re_2_2,im_2_2"


def test_spectrum_wrong_shape(tmp_path):
    path = tmp_path / "s.csv"
    write_spectrum(path, white_noise_spectrum((3,), 2))
    text = path.read_text().splitlines()
    path.write_text("\n".join(text[:-1]) + "\n")
    with pytest.raises(FormatError):
        read_spectrum(path)
    write_field(path, MultiField.from_observations(np.zeros((1, 2))))
    with pytest.raises(FormatError):
        read_spectrum(path)


def test_study_round_trip(tmp_path):
    rows = [StudyRow(0, 2, "periodic", 1.25, 0.3, None, 0.123456789012345678, 1.5),
            StudyRow(0, 2, "ml", None, None, 1000, 2.5, 10.0)]
    path = tmp_path / "study.csv"
    write_study(path, rows, seed=1)
    back = read_study(path)
    assert back[0]["spectral_norm"] == rows[0].spectral_norm
    assert back[1]["tau"] is None and back[1]["checkpoint"] == 1000
    assert path.read_text().splitlines()[1] == ",".join(STUDY_COLUMNS)


def test_array_field_round_trip(tmp_path, rng):
    arr = rng.standard_normal((3, 4, 2))
    path = tmp_path / "a.csv"
    write_array_field(path, arr)
    np.testing.assert_array_equal(read_array_field(path), arr)


def test_factor_table_layout():
    f = white_noise_spectrum((2,), 3)
    m1 = FactorModel(np.array([[0.6, 0.8, 0.0]]), np.ones((1, 2)), f, 0.4, 0.0, 3.0)
    m2 = FactorModel(np.array([[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]]), np.ones((2, 2)), f, 0.7, 0.0, 3.0)
    header, rows = factor_table([m1, m2], ["a", "b", "c"])
    assert header == ["component", "J1_A1", "J2_A1", "J2_A2"]
    assert rows[1] == ["b", 0.8, 0.8, 0.0]
    assert rows[-1][0] == "percent_explained" and rows[-1][1] == pytest.approx(40.0)
    text = format_factor_table([m1, m2])
    assert "70.0%" in text and "0.600" in text
