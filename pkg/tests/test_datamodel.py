import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from tdadapt.datamodel import (
    Checkpoint,
    SourceDataset,
    TargetDataset,
    checkpoint_bytes,
    load_checkpoint,
    load_csv,
    load_labels,
    load_rawmat,
    parse_checkpoint,
    save_checkpoint,
    save_csv,
    save_rawmat,
    synth_blobs,
)
from tdadapt.errors import ConfigError, DataFormatError
from tdadapt.features import FeatureFunction, init_params
from tdadapt.trainer import TrainConfig, initial_checkpoint


class TestCsv:
    def test_labeled_three_rows(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("0,1.0,2.0\n1,3.0,4.0\n0,5.0,6.0\n")
        ds = load_csv(p, has_labels=True)
        assert isinstance(ds, SourceDataset)
        assert ds.n == 3 and ds.dim == 2
        np.testing.assert_array_equal(ds.labels, [0, 1, 0])
        np.testing.assert_array_equal(ds.points, [[1, 2], [3, 4], [5, 6]])
        assert ds.class_count == 2

    def test_unlabeled(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("1.5,2\n-3,4e-1\n")
        ds = load_csv(p, has_labels=False)
        assert isinstance(ds, TargetDataset)
        np.testing.assert_array_equal(ds.points, [[1.5, 2.0], [-3.0, 0.4]])
        assert not ds.has_ground_truth

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        with pytest.raises(DataFormatError, match="empty dataset"):
            load_csv(p, has_labels=False)

    def test_non_numeric_cell_names_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("0,1.0,2.0\n1,abc,4.0\n")
        with pytest.raises(DataFormatError, match="row 2, column 2"):
            load_csv(p, has_labels=True)

    def test_ragged_rows(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("1,2\n3\n")
        with pytest.raises(DataFormatError, match="row 2"):
            load_csv(p, has_labels=False)

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "l.csv"
        p.write_text("0,1\n5,2\n")
        with pytest.raises(DataFormatError, match="row 2, column 1"):
            load_csv(p, has_labels=True, class_count=3)

    def test_non_finite(self, tmp_path):
        p = tmp_path / "n.csv"
        p.write_text("1,nan\n")
        with pytest.raises(DataFormatError, match="row 1, column 2"):
            load_csv(p, has_labels=False)

    def test_no_implicit_normalization(self, tmp_path):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(7, 3)) * 1e3 + 17
        y = rng.integers(0, 4, size=7)
        save_csv(tmp_path / "x.csv", X, y)
        ds = load_csv(tmp_path / "x.csv", has_labels=True)
        np.testing.assert_array_equal(ds.points, X)
        np.testing.assert_array_equal(ds.labels, y)

    def test_labels_file(self, tmp_path):
        p = tmp_path / "y.csv"
        p.write_text("2\n0\n1\n")
        np.testing.assert_array_equal(load_labels(p), [2, 0, 1])


class TestRawMat:
    def test_identity(self, tmp_path):
        p = tmp_path / "m.tdm"
        p.write_bytes(b"TDA1" + struct.pack("<QQ", 2, 2) + struct.pack("<4f", 1, 0, 0, 1))
        np.testing.assert_array_equal(load_rawmat(p), np.eye(2))

    def test_truncated(self, tmp_path):
        p = tmp_path / "m.tdm"
        p.write_bytes(b"TDA1" + struct.pack("<QQ", 2, 2) + struct.pack("<3f", 1, 0, 0))
        with pytest.raises(DataFormatError, match="payload"):
            load_rawmat(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.tdm"
        p.write_bytes(b"XXXX" + struct.pack("<QQ", 1, 1) + struct.pack("<f", 1))
        with pytest.raises(DataFormatError, match="magic"):
            load_rawmat(p)

    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                      elements=st.floats(-1e6, 1e6, width=32)))
    def test_round_trip_byte_identical(self, tmp_path_factory, m):
        d = tmp_path_factory.mktemp("raw")
        save_rawmat(d / "a.tdm", m)
        loaded = load_rawmat(d / "a.tdm")
        save_rawmat(d / "b.tdm", loaded)
        assert (d / "a.tdm").read_bytes() == (d / "b.tdm").read_bytes()
        np.testing.assert_array_equal(loaded, m)


class TestSynth:
    def test_identity_transform(self):
        src, tgt = synth_blobs(3, 10, rotation_deg=0, shift=[0, 0], noise_sd=0, seed=1)
        np.testing.assert_array_equal(tgt.points, src.points)

    def test_antipodal(self):
        src, tgt = synth_blobs(4, 5, rotation_deg=180, noise_sd=0, seed=2)
        np.testing.assert_allclose(tgt.points, -src.points, atol=1e-12)
        np.testing.assert_array_equal(tgt.evaluation_labels(), src.labels)

    def test_deterministic(self):
        a = synth_blobs(3, 20, rotation_deg=30, shift=[1, -1], noise_sd=1, seed=9)
        b = synth_blobs(3, 20, rotation_deg=30, shift=[1, -1], noise_sd=1, seed=9)
        assert a[0].points.tobytes() == b[0].points.tobytes()
        assert a[1].points.tobytes() == b[1].points.tobytes()

    def test_centers_on_radius_five(self):
        src, _ = synth_blobs(5, 1, noise_sd=0, seed=0)
        np.testing.assert_allclose(np.linalg.norm(src.points, axis=1), 5.0)

    def test_too_few_classes(self):
        with pytest.raises(ConfigError):
            synth_blobs(1, 10)


class TestTargetGating:
    def test_truth_only_through_accessor(self):
        t = TargetDataset(np.zeros((3, 2)), np.array([0, 1, 1]))
        assert not hasattr(t, "labels")
        np.testing.assert_array_equal(t.evaluation_labels(), [0, 1, 1])

    def test_missing_truth(self):
        with pytest.raises(DataFormatError):
            TargetDataset(np.zeros((2, 2))).evaluation_labels()

    def test_immutable(self):
        t = TargetDataset(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            t.points[0, 0] = 1.0


def _trained_like_checkpoint():
    f = init_params("mlp1", 3, 4, 5, seed=11)
    rng = np.random.default_rng(0)
    return Checkpoint(
        W=rng.normal(size=(4, 4)),
        features=f,
        accum_W=rng.random((4, 4)),
        accum_theta=rng.random(f.n_params),
        config={"margin": 0.1 + 0.2, "arch": "mlp1"},
        iteration=17,
        seed=11,
    )


class TestCheckpoint:
    def test_round_trip_fresh(self, tmp_path):
        c = initial_checkpoint(TrainConfig(seed=4), 3)
        save_checkpoint(c, tmp_path / "c.ck")
        assert load_checkpoint(tmp_path / "c.ck") == c

    @pytest.mark.parametrize("arch", ["precomputed", "linear", "mlp1"])
    def test_round_trip_bit_exact(self, tmp_path, arch):
        c = _trained_like_checkpoint() if arch == "mlp1" else initial_checkpoint(TrainConfig(arch=arch), 3)
        save_checkpoint(c, tmp_path / "c.ck")
        back = load_checkpoint(tmp_path / "c.ck")
        assert back == c
        assert checkpoint_bytes(back) == (tmp_path / "c.ck").read_bytes()

    def test_wrong_magic(self, tmp_path):
        buf = bytearray(checkpoint_bytes(_trained_like_checkpoint()))
        buf[:4] = b"NOPE"
        with pytest.raises(DataFormatError, match="magic"):
            parse_checkpoint(bytes(buf))

    def test_wrong_version(self):
        buf = bytearray(checkpoint_bytes(_trained_like_checkpoint()))
        buf[4:8] = struct.pack("<I", 99)
        with pytest.raises(DataFormatError, match="version"):
            parse_checkpoint(bytes(buf))

    def test_corrupt_length(self):
        buf = bytearray(checkpoint_bytes(_trained_like_checkpoint()))
        buf[8:16] = struct.pack("<Q", 10**9)
        with pytest.raises(DataFormatError):
            parse_checkpoint(bytes(buf))

    def test_truncated(self):
        buf = checkpoint_bytes(_trained_like_checkpoint())
        with pytest.raises(DataFormatError):
            parse_checkpoint(buf[:-3])

    def test_dimension_inconsistency(self):
        f = FeatureFunction("precomputed", 4, 4)
        with pytest.raises(DataFormatError, match="d_out=4"):
            Checkpoint(np.eye(3), f, np.zeros((3, 3)), np.zeros(0))

    def test_dimension_inconsistency_on_disk(self):
        # build a file whose W section is 3x3 while the descriptor says d_out=4
        good = initial_checkpoint(TrainConfig(arch="precomputed"), 4)
        buf = checkpoint_bytes(good)
        small = initial_checkpoint(TrainConfig(arch="precomputed"), 3)
        sb = checkpoint_bytes(small)

        def sections(b):
            pos, out = 8, []
            for _ in range(5):
                (n,) = struct.unpack_from("<Q", b, pos)
                out.append(b[pos:pos + 8 + n])
                pos += 8 + n
            return out

        g, s = sections(buf), sections(sb)
        mixed = buf[:8] + g[0] + g[1] + g[2] + s[3] + g[4]
        with pytest.raises(DataFormatError):
            parse_checkpoint(mixed)
