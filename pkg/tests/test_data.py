import numpy as np
import pytest

from conicnet import (
    FormatError,
    LabeledDataset,
    load_amat,
    load_dataset,
    load_labels,
    make_rng,
    save_dataset,
    save_labels,
    split_dataset,
)


def write_amat(path, rows):
    path.write_text("\n".join(" ".join(f"{v:.6f}" for v in row) for row in rows) + "\n")


class TestLoadAmat:
    def test_single_zero_row(self, tmp_path):
        write_amat(tmp_path / "a.amat", [np.concatenate([np.zeros(784), [3.0]])])
        ds = load_amat(tmp_path / "a.amat")
        assert ds.images.shape == (1, 28, 28, 1)
        assert not ds.images.any()
        assert ds.labels.tolist() == [3]

    def test_row_major_pixel_order(self, tmp_path):
        pixels = np.zeros(784)
        pixels[28 * 2 + 5] = 0.75  # row 2, column 5
        write_amat(tmp_path / "a.amat", [np.concatenate([pixels, [1.0]])])
        ds = load_amat(tmp_path / "a.amat")
        assert ds.images[0, 2, 5, 0] == pytest.approx(0.75)

    def test_short_row_names_line(self, tmp_path):
        good = np.concatenate([np.zeros(784), [0.0]])
        write_amat(tmp_path / "a.amat", [good, np.zeros(784)])
        with pytest.raises(FormatError, match="line 2"):
            load_amat(tmp_path / "a.amat")

    def test_non_numeric_field(self, tmp_path):
        (tmp_path / "a.amat").write_text(" ".join(["x"] * 785) + "\n")
        with pytest.raises(FormatError, match="line 1"):
            load_amat(tmp_path / "a.amat")

    def test_value_ranges(self, tmp_path, rng):
        rows = [np.concatenate([rng.random(784), [float(rng.integers(10))]]) for _ in range(5)]
        write_amat(tmp_path / "a.amat", rows)
        ds = load_amat(tmp_path / "a.amat")
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert set(ds.labels.tolist()) <= set(range(10))

    def test_empty_file(self, tmp_path):
        (tmp_path / "a.amat").write_text("\n")
        with pytest.raises(FormatError, match="no data"):
            load_amat(tmp_path / "a.amat")


def toy_dataset(rng, n=10, classes=4):
    return LabeledDataset(
        rng.random((n, 5, 5, 1)).astype(np.float32),
        (np.arange(n) % classes).astype(np.int64),
        classes,
        name="toy",
    )


class TestSplit:
    def test_all_train(self, rng):
        ds = toy_dataset(rng)
        (tr, va, te) = split_dataset(ds, (10, 0, 0), seed=0)
        assert len(tr) == 10

    def test_same_seed_same_split(self, rng):
        ds = toy_dataset(rng)
        a = split_dataset(ds, (6, 4), seed=3)
        b = split_dataset(ds, (6, 4), seed=3)
        np.testing.assert_array_equal(a[0].images, b[0].images)

    def test_disjoint(self, rng):
        ds = LabeledDataset(
            np.arange(12, dtype=np.float32).reshape(12, 1, 1, 1), np.zeros(12, dtype=np.int64), 1
        )
        tr, te = split_dataset(ds, (7, 5), seed=1)
        assert not set(tr.images.ravel()) & set(te.images.ravel())

    def test_oversubscription(self, rng):
        with pytest.raises(ValueError, match="requested 13"):
            split_dataset(toy_dataset(rng), (13,), seed=0)


class TestLabelFile:
    def test_roundtrip(self, tmp_path):
        labels = np.array([0, 5, 2, 9], dtype=np.int64)
        save_labels(tmp_path / "l.rlbl", labels)
        np.testing.assert_array_equal(load_labels(tmp_path / "l.rlbl"), labels)

    def test_magic(self, tmp_path):
        save_labels(tmp_path / "l.rlbl", np.array([1]))
        assert (tmp_path / "l.rlbl").read_bytes()[:4] == b"RLBL"

    def test_bad_file(self, tmp_path):
        (tmp_path / "bad.rlbl").write_bytes(b"XXXXXXXXXX")
        with pytest.raises(FormatError, match="magic"):
            load_labels(tmp_path / "bad.rlbl")

    def test_truncated(self, tmp_path):
        save_labels(tmp_path / "l.rlbl", np.arange(10))
        raw = (tmp_path / "l.rlbl").read_bytes()
        (tmp_path / "cut.rlbl").write_bytes(raw[:-4])
        with pytest.raises(FormatError, match="truncated"):
            load_labels(tmp_path / "cut.rlbl")


class TestDatasetRoundtrip:
    def test_bitwise(self, tmp_path, rng):
        ds = toy_dataset(rng)
        save_dataset(tmp_path / "ds", ds, manifest={"seed": 4})
        back = load_dataset(tmp_path / "ds")
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.classes == ds.classes

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError, match="manifest"):
            load_dataset(tmp_path)


class TestLabeledDataset:
    def test_label_range_checked(self, rng):
        with pytest.raises(ValueError, match="class range"):
            LabeledDataset(rng.random((2, 3, 3, 1)), np.array([0, 5]), classes=2)

    def test_empty_split_remainder_allowed(self, rng):
        ds = toy_dataset(rng)
        _, rest = split_dataset(ds, (10, 0), seed=0)
        assert len(rest) == 0

    def test_length_mismatch(self, rng):
        with pytest.raises(ValueError, match="N"):
            LabeledDataset(rng.random((2, 3, 3, 1)), np.zeros(3, dtype=int), classes=1)
