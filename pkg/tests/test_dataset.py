import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardbench.dataset import (
    CsvFormatError,
    LabeledDataset,
    SubsetSelection,
    export_csv,
    generate_blobs_with_outliers,
    generate_teacher_dataset,
    ingest_csv,
    sign_label,
    take_subset,
)
from hardbench.perceptron import Perceptron


def test_sign_convention_positive():
    teacher = Perceptron(np.array([1.0, 0.0]))
    ds = LabeledDataset(np.array([[3.7, -0.2]]), sign_label(np.array([[3.7, -0.2]]) @ teacher.weights))
    assert ds.labels[0] == 1


def test_sign_convention_negative():
    teacher = Perceptron(np.array([1.0, 0.0]))
    label = sign_label(np.array([-0.001 * 1.0 + 9.9 * 0.0]))
    assert label[0] == -1


def test_sign_zero_ties_to_plus_one():
    assert sign_label(np.array([0.0]))[0] == 1


def test_generate_labels_match_teacher_sign():
    teacher = Perceptron(np.arange(1, 6, dtype=float))
    ds = generate_teacher_dataset(5, 400, teacher, seed=7)
    assert np.array_equal(ds.labels, sign_label(ds.features @ teacher.weights))


def test_generate_determinism_bitwise():
    teacher = Perceptron(np.ones(4))
    a = generate_teacher_dataset(4, 100, teacher, seed=42)
    b = generate_teacher_dataset(4, 100, teacher, seed=42)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    c = generate_teacher_dataset(4, 100, teacher, seed=43)
    assert not np.array_equal(a.features, c.features)


def test_generate_class_balance_large_n():
    teacher = Perceptron(np.ones(50))
    ds = generate_teacher_dataset(50, 100_000, teacher, seed=3)
    frac_pos = np.mean(ds.labels == 1)
    assert abs(frac_pos - 0.5) < 0.01


def test_generate_feature_moments():
    teacher = Perceptron(np.ones(8))
    ds = generate_teacher_dataset(8, 100_000, teacher, seed=11)
    assert np.abs(ds.features.mean(axis=0)).max() < 0.02
    assert np.abs(ds.features.var(axis=0) - 1.0).max() < 0.05


def test_generate_dimension_mismatch():
    teacher = Perceptron(np.ones(3))
    with pytest.raises(ValueError, match="dimension"):
        generate_teacher_dataset(4, 10, teacher, seed=0)


def test_dataset_validation():
    with pytest.raises(ValueError, match="labels"):
        LabeledDataset(np.ones((2, 2)), np.array([1, 2]))
    with pytest.raises(ValueError, match="finite"):
        LabeledDataset(np.array([[np.nan, 1.0]]), np.array([1]))
    with pytest.raises(ValueError):
        LabeledDataset(np.ones((0, 2)), np.array([]))


def test_dataset_immutable():
    ds = generate_teacher_dataset(3, 5, Perceptron(np.ones(3)), seed=0)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 99.0


# ---------------------------------------------------------------------------
# CSV round trips
# ---------------------------------------------------------------------------

def test_ingest_lexicographic_label_mapping(tmp_path):
    p = tmp_path / "toy.csv"
    p.write_text("x0,x1,label\n1.0,2.0,b\n3.0,4.0,a\n5.0,6.0,b\n")
    ds = ingest_csv(p, "label")
    assert ds.labels.tolist() == [1, -1, 1]  # a -> -1, b -> +1


def test_ingest_three_label_values_rejected(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x0,label\n1.0,a\n2.0,b\n3.0,c\n")
    with pytest.raises(CsvFormatError, match=r"\['a', 'b', 'c'\]"):
        ingest_csv(p, "label")


def test_ingest_reports_bad_cell_position(tmp_path):
    p = tmp_path / "bad2.csv"
    p.write_text("x0,x1,label\n1.0,2.0,a\n1.0,oops,b\n")
    with pytest.raises(CsvFormatError, match="row 3.*'x1'"):
        ingest_csv(p, "label")


def test_ingest_missing_file():
    with pytest.raises(FileNotFoundError):
        ingest_csv("/nonexistent/nowhere.csv", "label")


def test_export_ingest_roundtrip_bitwise(tmp_path):
    ds = generate_teacher_dataset(6, 50, Perceptron(np.arange(1.0, 7.0)), seed=9)
    p = tmp_path / "round.csv"
    export_csv(ds, p)
    back = ingest_csv(p, "label")
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)


def test_ingest_standardize(tmp_path):
    p = tmp_path / "std.csv"
    rows = ["x0,x1,label"] + [f"{10 + i},{5 * i},{'a' if i % 2 else 'b'}" for i in range(10)]
    p.write_text("\n".join(rows) + "\n")
    ds = ingest_csv(p, "label", standardize=True)
    assert np.allclose(ds.features.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(ds.features.std(axis=0), 1.0, atol=1e-12)


# ---------------------------------------------------------------------------
# Subsetting
# ---------------------------------------------------------------------------

def _toy(n=6, d=3, seed=1):
    return generate_teacher_dataset(d, n, Perceptron(np.ones(d)), seed=seed)


def test_take_subset_identity():
    ds = _toy()
    sub = take_subset(ds, SubsetSelection(tuple(range(ds.n)), "random"))
    assert np.array_equal(sub.features, ds.features)


def test_take_subset_order():
    ds = _toy(n=3)
    sub = take_subset(ds, SubsetSelection((2, 0), "random"))
    assert np.array_equal(sub.features[0], ds.features[2])
    assert np.array_equal(sub.features[1], ds.features[0])


def test_take_subset_out_of_range():
    ds = _toy(n=3)
    with pytest.raises(IndexError):
        take_subset(ds, SubsetSelection((5,), "random"))


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_subset_composition(data):
    ds = _toy(n=10)
    outer = data.draw(st.lists(st.integers(0, 9), min_size=1, max_size=6, unique=True))
    inner = data.draw(st.lists(st.integers(0, len(outer) - 1), min_size=1, max_size=len(outer), unique=True))
    via_two = take_subset(take_subset(ds, outer), inner)
    composed = [outer[i] for i in inner]
    direct = take_subset(ds, composed)
    assert np.array_equal(via_two.features, direct.features)
    assert np.array_equal(via_two.labels, direct.labels)


def test_selection_validation_and_json():
    with pytest.raises(ValueError, match="unique"):
        SubsetSelection((1, 1), "random")
    with pytest.raises(ValueError, match="strategy"):
        SubsetSelection((1, 2), "bogus")
    sel = SubsetSelection((3, 1, 4), "biased", seed=7, theta=0.5)
    back = SubsetSelection.from_json(sel.to_json())
    assert back == sel


def test_blobs_with_outliers_shape_and_labels():
    ds = generate_blobs_with_outliers(4, 100, outlier_fraction=0.1, seed=0)
    assert ds.n == 200
    assert (ds.labels[:100] == -1).all() and (ds.labels[100:] == 1).all()
    # outliers sit deep on the wrong side along the first axis
    outl_pos_class = ds.features[190:, 0]
    assert (outl_pos_class < -2.0).all()
