import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framesearch.dataio import (NBI_MATRIX, FrameCorpus, SynthConfig, cluster_base, generate_synthetic,
                                load_corpus, modality_transform, read_image, rotate_frame, sample_pairs,
                                save_corpus, write_image)
from framesearch.errors import DataError, ImageDecodeError, ManifestError


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(SynthConfig(n_clusters=6, frames_per_cluster=4, image_size=32, seed=3))


class TestLoadCorpus:
    def test_empty_directory(self, tmp_path):
        assert len(load_corpus(tmp_path)) == 0

    def test_three_ppms_in_order(self, tmp_path):
        rng = np.random.default_rng(0)
        for name in ("c", "a", "b"):
            write_image(tmp_path / f"{name}.ppm", rng.random((4, 5, 3)))
        corpus = load_corpus(tmp_path)
        assert corpus.ids == ["a", "b", "c"]
        assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")

    def test_round_trip_exact_for_8bit(self, tmp_path, small):
        save_corpus(small, tmp_path)
        back = load_corpus(tmp_path)
        assert back.ids == small.ids
        for a, b in zip(back.pixels, small.pixels):
            np.testing.assert_array_equal(a, b)
        assert back.labels == small.labels

    def test_unreadable_file_named(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not an image")
        with pytest.raises(ImageDecodeError, match="bad.png"):
            load_corpus(tmp_path)

    def test_manifest_missing_frame(self, tmp_path):
        write_image(tmp_path / "a.png", np.zeros((2, 2, 3)))
        (tmp_path / "manifest.csv").write_text("frame_id,cluster_id,modality,rotation_deg\nzz,0,WL,0\n")
        with pytest.raises(ManifestError, match="zz"):
            load_corpus(tmp_path)

    def test_bad_manifest_header(self, tmp_path):
        write_image(tmp_path / "a.png", np.zeros((2, 2, 3)))
        (tmp_path / "manifest.csv").write_text("id,cluster\na,0\n")
        with pytest.raises(ManifestError):
            load_corpus(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError):
            load_corpus(tmp_path / "nope")

    def test_read_image_corrupt(self, tmp_path):
        p = tmp_path / "x.png"
        p.write_bytes(b"\x89PNG garbage")
        with pytest.raises(ImageDecodeError):
            read_image(p)


class TestCorpusInvariants:
    def test_duplicate_ids_rejected(self):
        px = np.zeros((2, 2, 3), dtype=np.float32)
        with pytest.raises(ValueError):
            FrameCorpus(["a", "a"], [px, px])

    def test_out_of_range_pixels_rejected(self):
        with pytest.raises(ValueError):
            FrameCorpus(["a"], [np.full((2, 2, 3), 1.5, dtype=np.float32)])


class TestGenerateSynthetic:
    def test_paper_layout(self):
        corpus = generate_synthetic(SynthConfig(n_clusters=100, frames_per_cluster=10, image_size=16))
        assert len(corpus) == 1000
        assert len({lab.cluster_id for lab in corpus.labels.values()}) == 100

    def test_deterministic(self):
        cfg = SynthConfig(n_clusters=3, frames_per_cluster=3, image_size=24, seed=11)
        a, b = generate_synthetic(cfg), generate_synthetic(cfg)
        assert a.ids == b.ids and a.labels == b.labels
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.pixels, b.pixels))

    def test_zero_clusters_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(n_clusters=0)

    def test_cluster_partition(self, small):
        clusters = small.clusters()
        members = [f for ids in clusters.values() for f in ids]
        assert sorted(members) == sorted(small.ids)
        assert all(len(v) == 4 for v in clusters.values())

    def test_members_match_rotated_base(self, small):
        """Each member is the rotated base, colour mapped for NBI, on the 8-bit grid."""
        for fid in small.ids:
            lab = small.labels[fid]
            expected = rotate_frame(cluster_base(3, lab.cluster_id, 32), lab.rotation_deg)
            if lab.modality == "NBI":
                # independent oracle: linear map then clamp, written out longhand
                expected = np.clip(np.einsum("ij,hwj->hwi", NBI_MATRIX, expected), 0.0, 1.0)
            assert np.abs(small[fid] - expected).max() <= 0.5 / 255 + 1e-6, fid

    def test_nbi_is_invertible_where_unclipped(self):
        rgb = np.random.default_rng(0).uniform(0.2, 0.6, size=(4, 4, 3))
        mapped = np.asarray(modality_transform(rgb), dtype=np.float64)
        assert ((mapped > 0) & (mapped < 1)).all()
        back = mapped @ np.linalg.inv(NBI_MATRIX).T
        np.testing.assert_allclose(back, rgb, atol=1e-6)


class TestModalityTransform:
    def test_black_fixed(self):
        np.testing.assert_array_equal(modality_transform(np.zeros((3, 3, 3))), 0.0)

    def test_red_maps_to_first_column(self):
        out = modality_transform(np.array([[[1.0, 0.0, 0.0]]]))[0, 0]
        np.testing.assert_allclose(out, np.clip(NBI_MATRIX[:, 0], 0, 1), rtol=1e-6)

    def test_deterministic(self, small):
        f = small.pixels[0]
        np.testing.assert_array_equal(modality_transform(f), modality_transform(f.copy()))


class TestRotate:
    def test_zero_is_identity(self, small):
        np.testing.assert_array_equal(rotate_frame(small.pixels[1], 0), small.pixels[1])

    def test_half_turn_twice(self, small):
        f = small.pixels[2]
        assert np.abs(rotate_frame(rotate_frame(f, 180), 180) - f).mean() < 1e-3

    def test_quarter_turn_is_index_permutation(self):
        f = np.random.default_rng(0).random((9, 9, 3)).astype(np.float32)
        assert np.abs(rotate_frame(f, 90) - np.rot90(f, 1, axes=(0, 1))).mean() < 1e-3

    @given(st.floats(0, 359.99), st.booleans(), st.integers(0, 100))
    @settings(max_examples=30, deadline=None)
    def test_composition_stays_in_unit_range(self, theta, nbi, seed):
        f = np.random.default_rng(seed).random((8, 8, 3)).astype(np.float32)
        out = rotate_frame(f, theta)
        if nbi:
            out = modality_transform(out)
        out = rotate_frame(out, theta / 2)
        assert out.min() >= 0 and out.max() <= 1


class TestSamplePairs:
    def test_all_similar(self, small):
        assert all(p.y == 0 for p in sample_pairs(small, 40, 1.0, seed=1))

    def test_exact_allocation(self, small):
        pairs = sample_pairs(small, 100, 0.5, seed=2)
        assert len(pairs) == 100
        assert sum(p.y == 0 for p in pairs) == 50

    def test_labels_follow_clusters(self, small):
        for p in sample_pairs(small, 300, 0.3, seed=3):
            same = small.cluster_of(p.a) == small.cluster_of(p.b)
            assert same == (p.y == 0)
            assert not (p.a == p.b and p.y == 1)

    def test_deterministic(self, small):
        assert sample_pairs(small, 50, 0.5, seed=4) == sample_pairs(small, 50, 0.5, seed=4)

    def test_unlabeled_rejected(self):
        px = np.zeros((2, 2, 3), dtype=np.float32)
        with pytest.raises(DataError):
            sample_pairs(FrameCorpus(["a", "b"], [px, px]), 4, 0.5)
