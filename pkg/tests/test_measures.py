import json

import numpy as np
import pytest

from wassreg.errors import DatasetFormatError, DimensionError, ValidationError
from wassreg.measures import (
    EmpiricalMeasure,
    RegressionDataset,
    load_dataset,
    make_dataset,
    make_uniform_measure,
    save_dataset,
)

from conftest import random_cloud, random_weighted


def test_uniform_single_point():
    m = make_uniform_measure([[0.0, 0.0]])
    assert m.weights.tolist() == [1.0]
    assert m.size == 1 and m.dim == 2


def test_uniform_three_points_1d():
    m = make_uniform_measure([[0.0], [1.0], [2.0]])
    assert np.allclose(m.weights, 1.0 / 3.0)


def test_empty_points_rejected():
    with pytest.raises(DimensionError):
        make_uniform_measure([])
    with pytest.raises(DimensionError):
        make_uniform_measure(np.zeros((0, 2)))


def test_nonfinite_rejected():
    with pytest.raises(ValidationError):
        make_uniform_measure([[np.nan, 0.0]])
    with pytest.raises(ValidationError):
        EmpiricalMeasure(np.array([[0.0]]), np.array([np.inf]))


def test_weight_invariants():
    with pytest.raises(ValidationError):
        EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([0.7, 0.2]))
    with pytest.raises(ValidationError):
        EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([1.5, -0.5]))


def test_measure_arrays_frozen():
    m = make_uniform_measure([[1.0, 2.0]])
    with pytest.raises(ValueError):
        m.points[0, 0] = 5.0


def test_dataset_validation():
    a = make_uniform_measure([[0.0, 0.0]])
    b = make_uniform_measure([[1.0]])
    with pytest.raises(ValidationError):
        make_dataset([(a, b)], 2)
    with pytest.raises(ValidationError):
        RegressionDataset(((a, a), (a, a)), 2, (0, 0))


def test_empty_dataset_roundtrip(tmp_path):
    data = make_dataset([], 3)
    for name in ("d.wrd", "d.json"):
        path = tmp_path / name
        save_dataset(data, path)
        back = load_dataset(path)
        assert len(back) == 0 and back.dim == 3


def _random_dataset(rng, uniform=True):
    pairs = []
    for _ in range(4):
        k_src = int(rng.integers(1, 7))
        k_tgt = int(rng.integers(1, 7))
        if uniform:
            pairs.append((random_cloud(rng, k_src, 3), random_cloud(rng, k_tgt, 3)))
        else:
            pairs.append((random_weighted(rng, k_src, 3), random_weighted(rng, k_tgt, 3)))
    return make_dataset(pairs, 3, ids=[7, 3, 11, 5])


@pytest.mark.parametrize("uniform", [True, False])
def test_binary_roundtrip_bit_exact(tmp_path, rng, uniform):
    data = _random_dataset(rng, uniform)
    path = tmp_path / "d.wrd"
    save_dataset(data, path)
    back = load_dataset(path)
    assert back.dim == data.dim and back.ids == data.ids
    for (s1, t1), (s2, t2) in zip(data.pairs, back.pairs):
        assert np.array_equal(s1.points, s2.points)
        assert np.array_equal(s1.weights, s2.weights)
        assert np.array_equal(t1.points, t2.points)
        assert np.array_equal(t1.weights, t2.weights)


def test_json_roundtrip_exact(tmp_path, rng):
    data = _random_dataset(rng, uniform=False)
    path = tmp_path / "d.json"
    save_dataset(data, path)
    back = load_dataset(path)
    assert back.ids == data.ids
    for (s1, _), (s2, _) in zip(data.pairs, back.pairs):
        assert np.array_equal(s1.points, s2.points)
        assert np.array_equal(s1.weights, s2.weights)


def test_save_then_save_same_bytes(tmp_path, rng):
    data = _random_dataset(rng)
    p1, p2 = tmp_path / "a.wrd", tmp_path / "b.wrd"
    save_dataset(data, p1)
    save_dataset(data, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_json_bad_weight_sum_is_validation_error(tmp_path):
    obj = {
        "format": "wassreg-dataset",
        "schema_version": 1,
        "dim": 1,
        "pairs": [
            {
                "id": 0,
                "source": {"points": [[0.0]], "weights": [0.9]},
                "target": {"points": [[0.0]], "weights": [1.0]},
            }
        ],
    }
    path = tmp_path / "d.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(ValidationError):
        load_dataset(path)


def test_json_parse_error_reports_position(tmp_path):
    path = tmp_path / "d.json"
    path.write_text('{"format": "wassreg-dataset",\n  broken')
    with pytest.raises(DatasetFormatError, match=r"line 2"):
        load_dataset(path)


def test_binary_bad_magic_and_truncation(tmp_path, rng):
    data = _random_dataset(rng)
    path = tmp_path / "d.wrd"
    save_dataset(data, path)
    raw = bytearray(path.read_bytes())

    bad = tmp_path / "bad.wrd"
    bad.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(DatasetFormatError, match="magic"):
        load_dataset(bad)

    trunc = tmp_path / "trunc.wrd"
    trunc.write_bytes(bytes(raw[:-9]))
    with pytest.raises(DatasetFormatError, match="offset"):
        load_dataset(trunc)


def test_unknown_schema_version_rejected(tmp_path, rng):
    data = _random_dataset(rng)
    wrd = tmp_path / "d.wrd"
    save_dataset(data, wrd)
    raw = bytearray(wrd.read_bytes())
    raw[4] = 9  # version field
    wrd.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="version"):
        load_dataset(wrd)

    js = tmp_path / "d.json"
    save_dataset(data, js)
    obj = json.loads(js.read_text())
    obj["schema_version"] = 99
    js.write_text(json.dumps(obj))
    with pytest.raises(DatasetFormatError, match="version"):
        load_dataset(js)


def test_format_inference_and_override(tmp_path, rng):
    data = _random_dataset(rng)
    odd = tmp_path / "d.bin"
    with pytest.raises(ValidationError):
        save_dataset(data, odd)
    save_dataset(data, odd, format="binary")
    assert load_dataset(odd, format="binary").ids == data.ids
