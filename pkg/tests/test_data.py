import struct

import numpy as np
import pytest

from advprune.data import (
    Dataset,
    load_csv,
    load_idx,
    make_blobs,
    make_spirals,
    make_tiny_images,
    split_train_val,
    write_csv,
)
from advprune.errors import ParameterError, ParseError, ValidationError
from advprune.models import build_mlp

from test_models import clean_accuracy, train_plain_sgd


def idx_bytes(images: np.ndarray, labels: np.ndarray) -> tuple[bytes, bytes]:
    n, h, w = images.shape
    img = struct.pack(">IIII", 0x00000803, n, h, w) + images.astype(np.uint8).tobytes()
    lab = struct.pack(">II", 0x00000801, n) + labels.astype(np.uint8).tobytes()
    return img, lab


class TestDatasetValidation:
    def test_rejects_out_of_range_label(self):
        with pytest.raises(ValidationError, match="label 5"):
            Dataset(np.zeros((2, 3)), np.array([0, 5]), 2, "t")

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            Dataset(np.array([[0.1, np.nan]]), np.array([0]), 1, "t")

    def test_rejects_out_of_clamp_range(self):
        with pytest.raises(ValidationError):
            Dataset(np.array([[1.5, 0.0]]), np.array([0]), 1, "t")

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            Dataset(np.zeros((0, 2)).reshape(0, 2), np.zeros(0, dtype=int), 1, "t")


class TestCsv:
    def test_two_row_verbatim(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0.25,0.5,0\n0.75,1.0,1\n")
        ds = load_csv(p)
        assert len(ds) == 2
        np.testing.assert_array_equal(ds.inputs, [[0.25, 0.5], [0.75, 1.0]])
        np.testing.assert_array_equal(ds.labels, [0, 1])
        assert ds.num_classes == 2

    def test_round_trip_exact(self, tmp_path):
        ds = make_blobs(10, 3, 4, 0.1, seed=5)
        p = tmp_path / "rt.csv"
        write_csv(p, ds)
        again = load_csv(p, num_classes=3)
        np.testing.assert_array_equal(ds.inputs, again.inputs)
        np.testing.assert_array_equal(ds.labels, again.labels)

    def test_header_flag(self, tmp_path):
        p = tmp_path / "h.csv"
        p.write_text("f0,f1,label\n0.1,0.2,0\n")
        ds = load_csv(p, has_header=True)
        assert len(ds) == 1

    def test_non_integer_label(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0.1,0.2,0.5\n")
        with pytest.raises(ParseError, match="bad.csv:1"):
            load_csv(p)

    def test_ragged_row_names_line(self, tmp_path):
        p = tmp_path / "ragged.csv"
        p.write_text("0.1,0.2,0\n0.3,1\n")
        with pytest.raises(ParseError, match="ragged.csv:2"):
            load_csv(p)

    def test_label_beyond_num_classes(self, tmp_path):
        p = tmp_path / "lbl.csv"
        p.write_text("0.1,0.2,3\n")
        with pytest.raises(ValidationError):
            load_csv(p, num_classes=2)


class TestIdx:
    def test_all_255_rescales_to_one(self, tmp_path):
        img, lab = idx_bytes(np.full((1, 2, 2), 255), np.array([0]))
        ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
        ip.write_bytes(img)
        lp.write_bytes(lab)
        ds = load_idx(ip, lp)
        assert ds.inputs.shape == (1, 1, 2, 2)
        np.testing.assert_array_equal(ds.inputs, np.ones((1, 1, 2, 2)))

    def test_bad_magic_reports_offset(self, tmp_path):
        img, lab = idx_bytes(np.zeros((1, 2, 2)), np.array([0]))
        ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
        ip.write_bytes(b"\x00\x00\x08\x99" + img[4:])
        lp.write_bytes(lab)
        with pytest.raises(ParseError, match="byte 0"):
            load_idx(ip, lp)

    def test_truncated_payload(self, tmp_path):
        img, lab = idx_bytes(np.zeros((2, 3, 3)), np.array([0, 1]))
        ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
        ip.write_bytes(img[:-1])
        lp.write_bytes(lab)
        with pytest.raises(ParseError):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        img, _ = idx_bytes(np.zeros((2, 2, 2)), np.array([0, 0]))
        _, lab = idx_bytes(np.zeros((3, 2, 2)), np.array([0, 0, 1]))
        ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
        ip.write_bytes(img)
        lp.write_bytes(lab)
        with pytest.raises(ValidationError):
            load_idx(ip, lp)


class TestGenerators:
    def test_blobs_deterministic(self):
        a = make_blobs(10, 2, 2, 0.1, 42)
        b = make_blobs(10, 2, 2, 0.1, 42)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_blobs_balanced_and_in_range(self):
        ds = make_blobs(15, 3, 2, 0.2, 1)
        assert len(ds) == 45
        assert all(int((ds.labels == c).sum()) == 15 for c in range(3))
        assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0

    def test_tiny_spread_is_separable(self):
        ds = make_blobs(30, 2, 2, 0.005, 7)
        model = build_mlp([2, 8, 2], seed=3)
        train_plain_sgd(model, ds.inputs, ds.labels, epochs=120, eta=0.5)
        assert clean_accuracy(model, ds.inputs, ds.labels) == 100.0

    def test_spirals_shape(self):
        ds = make_spirals(25, turns=1.5, noise=0.01, seed=2)
        assert ds.inputs.shape == (50, 2)
        assert ds.num_classes == 2

    def test_tiny_images_shape(self):
        ds = make_tiny_images(4, 3, 8, 8, seed=9)
        assert ds.inputs.shape == (12, 1, 8, 8)
        assert ds.num_classes == 3

    def test_validation(self):
        with pytest.raises(ParameterError):
            make_blobs(0, 2, 2, 0.1, 0)
        with pytest.raises(ParameterError):
            make_blobs(5, 2, 2, -0.1, 0)


class TestSplit:
    def test_ninety_into_eighty_ten(self):
        ds = make_blobs(45, 2, 2, 0.1, 3)
        train, val = split_train_val(ds, 1.0 / 9.0, seed=1)
        assert len(train) == 80 and len(val) == 10

    def test_union_is_original_multiset(self):
        ds = make_blobs(20, 2, 3, 0.1, 4)
        train, val = split_train_val(ds, 0.25, seed=2)
        combined = np.concatenate([train.inputs, val.inputs])
        assert sorted(map(tuple, combined.tolist())) == sorted(map(tuple, ds.inputs.tolist()))

    def test_same_seed_same_assignment(self):
        ds = make_blobs(20, 2, 2, 0.1, 5)
        t1, v1 = split_train_val(ds, 0.3, seed=9)
        t2, v2 = split_train_val(ds, 0.3, seed=9)
        np.testing.assert_array_equal(t1.inputs, t2.inputs)
        np.testing.assert_array_equal(v1.labels, v2.labels)

    def test_fraction_out_of_range(self):
        ds = make_blobs(5, 2, 2, 0.1, 6)
        for frac in [0.0, 1.0, -0.2, 1.5]:
            with pytest.raises(ParameterError):
                split_train_val(ds, frac, seed=0)
