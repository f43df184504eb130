"""PFV1 round trips, format errors, mask/grid conversions."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewbench.errors import DomainError, FormatError
from viewbench.featstore import (
    PatchFeatureMap,
    downsample_mask,
    read_feature_file,
    read_mask,
    read_sidecar,
    upsample_distribution,
    write_feature_file,
    write_mask,
    write_sidecar,
)


def tiny_map() -> PatchFeatureMap:
    return PatchFeatureMap.from_array(
        np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(1, 1, 4)
    )


class TestFeatureFileFormat:
    def test_smallest_map_layout(self, tmp_path):
        path = tmp_path / "f.pfv"
        write_feature_file(tiny_map(), path)
        raw = path.read_bytes()
        assert len(raw) == 4 + 16 + 16
        assert raw[:4] == b"PFV1"
        assert struct.unpack("<4I", raw[4:20]) == (1, 1, 4, 0)
        back = read_feature_file(path)
        assert back.data.tobytes() == tiny_map().data.tobytes()

    def test_paper_grid_payload_size(self, tmp_path):
        # 32x32 grid of 768-dim features -> 3,145,728 payload bytes
        fmap = PatchFeatureMap.from_array(np.zeros((32, 32, 768), dtype=np.float32))
        path = tmp_path / "big.pfv"
        write_feature_file(fmap, path)
        assert path.stat().st_size == 20 + 3_145_728

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.pfv"
        write_feature_file(tiny_map(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"PFV2"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="offset 0"):
            read_feature_file(path)

    def test_unsupported_dtype_code(self, tmp_path):
        path = tmp_path / "f.pfv"
        write_feature_file(tiny_map(), path)
        raw = bytearray(path.read_bytes())
        raw[16:20] = struct.pack("<I", 1)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="offset 16"):
            read_feature_file(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "f.pfv"
        write_feature_file(tiny_map(), path)
        path.write_bytes(path.read_bytes()[:-6])
        with pytest.raises(FormatError, match="offset 30"):
            read_feature_file(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "f.pfv"
        write_feature_file(tiny_map(), path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(FormatError, match="offset 36"):
            read_feature_file(path)

    def test_non_finite_value_offset(self, tmp_path):
        path = tmp_path / "f.pfv"
        write_feature_file(tiny_map(), path)
        raw = bytearray(path.read_bytes())
        raw[20 + 4 * 2 : 20 + 4 * 3] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="offset 28"):
            read_feature_file(path)

    def test_write_rejects_non_finite(self, tmp_path):
        arr = np.ones((1, 2, 2), dtype=np.float32)
        arr[0, 1, 0] = np.inf
        fmap = PatchFeatureMap(1, 2, 2, np.ones((1, 2, 2), dtype=np.float32))
        object.__setattr__(fmap, "data", arr)
        with pytest.raises(FormatError, match="offset 28"):
            write_feature_file(fmap, tmp_path / "f.pfv")

    def test_round_trip_many_random_maps(self, tmp_path):
        rng = np.random.default_rng(17)
        path = tmp_path / "f.pfv"
        for _ in range(10_000):
            gh, gw, dim = rng.integers(1, 5, size=3)
            fmap = PatchFeatureMap.from_array(
                rng.normal(size=(gh, gw, dim)).astype(np.float32)
            )
            write_feature_file(fmap, path)
            back = read_feature_file(path)
            assert back.data.tobytes() == fmap.data.tobytes()
            assert (back.grid_h, back.grid_w, back.dim) == (fmap.grid_h, fmap.grid_w, fmap.dim)

    def test_constructor_validates(self):
        with pytest.raises(ValueError):
            PatchFeatureMap(0, 1, 1, np.zeros((0, 1, 1), dtype=np.float32))
        with pytest.raises(ValueError):
            PatchFeatureMap.from_array(np.full((1, 1, 1), np.nan, dtype=np.float32))


def brute_force_downsample(mask, grid_h, grid_w):
    h, w = mask.shape
    out = np.zeros((grid_h, grid_w), dtype=np.int64)
    rows = [(i * h) // grid_h for i in range(grid_h + 1)]
    cols = [(j * w) // grid_w for j in range(grid_w + 1)]
    for i in range(grid_h):
        for j in range(grid_w):
            counts = {}
            for r in range(rows[i], rows[i + 1]):
                for c in range(cols[j], cols[j + 1]):
                    counts[mask[r, c]] = counts.get(mask[r, c], 0) + 1
            best = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
            out[i, j] = best
    return out


class TestDownsampleMask:
    def test_uniform_mask(self):
        mask = np.full((12, 12), 3, dtype=np.uint8)
        assert (downsample_mask(mask, 3, 4) == 3).all()

    def test_majority_two_by_two(self):
        mask = np.array([[0, 1], [1, 1]], dtype=np.uint8)
        assert downsample_mask(mask, 1, 1)[0, 0] == 1

    def test_tie_goes_to_smallest_id(self):
        mask = np.array([[2, 5], [5, 2]], dtype=np.uint8)
        assert downsample_mask(mask, 1, 1)[0, 0] == 2

    def test_random_against_histogram_oracle(self):
        rng = np.random.default_rng(3)
        mask = rng.integers(0, 16, size=(64, 64)).astype(np.uint8)
        got = downsample_mask(mask, 8, 8)
        np.testing.assert_array_equal(got, brute_force_downsample(mask, 8, 8))

    def test_uneven_blocks_against_oracle(self):
        rng = np.random.default_rng(4)
        mask = rng.integers(0, 4, size=(10, 13)).astype(np.uint8)
        got = downsample_mask(mask, 4, 5)
        np.testing.assert_array_equal(got, brute_force_downsample(mask, 4, 5))

    def test_grid_larger_than_mask(self):
        with pytest.raises(DomainError):
            downsample_mask(np.zeros((4, 4), dtype=np.uint8), 8, 2)


def one_hot_grid(labels: np.ndarray, num_classes: int) -> np.ndarray:
    gh, gw = labels.shape
    out = np.zeros((gh, gw, num_classes), dtype=np.float64)
    out[np.arange(gh)[:, None], np.arange(gw)[None, :], labels] = 1.0
    return out


class TestUpsampleDistribution:
    def test_uniform_single_class(self):
        dist = one_hot_grid(np.full((3, 3), 2), 4)
        assert (upsample_distribution(dist, 30, 30) == 2).all()

    def test_single_cell_grid(self):
        dist = one_hot_grid(np.array([[1]]), 3)
        assert (upsample_distribution(dist, 17, 9) == 1).all()

    def test_one_hot_corners_nearest_partition(self):
        # analytic bilinear weights: away from the midlines the argmax is
        # the nearest corner's class
        labels = np.array([[0, 1], [2, 3]])
        dist = one_hot_grid(labels, 4)
        out = upsample_distribution(dist, 16, 16)
        for y, x in [(0, 0), (0, 15), (15, 0), (15, 15), (2, 3), (3, 12), (12, 2), (13, 13)]:
            sy = (y + 0.5) * 2 / 16 - 0.5
            sx = (x + 0.5) * 2 / 16 - 0.5
            nearest = labels[int(round(min(max(sy, 0), 1)))][int(round(min(max(sx, 0), 1)))]
            assert out[y, x] == nearest

    def test_rejects_unnormalized(self):
        dist = np.full((2, 2, 3), 0.5)
        with pytest.raises(DomainError):
            upsample_distribution(dist, 4, 4)

    def test_nearest_mode_recovers_blocks(self):
        labels = np.array([[0, 1], [3, 2]])
        out = upsample_distribution(one_hot_grid(labels, 4), 8, 8, mode="nearest")
        np.testing.assert_array_equal(out, np.kron(labels, np.ones((4, 4), dtype=int)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(2, 5), st.integers(0, 10_000))
    def test_output_classes_have_support(self, gh, gw, n_classes, seed):
        rng = np.random.default_rng(seed)
        dist = rng.dirichlet(np.ones(n_classes), size=(gh, gw))
        out = upsample_distribution(dist, 3 * gh, 3 * gw)
        supported = {c for c in range(n_classes) if (dist[..., c] > 0).any()}
        assert set(np.unique(out).tolist()) <= supported

    def test_down_up_round_trip(self):
        rng = np.random.default_rng(11)
        labels = rng.integers(0, 4, size=(6, 6))
        up = upsample_distribution(one_hot_grid(labels, 4), 48, 48)
        np.testing.assert_array_equal(downsample_mask(up, 6, 6), labels)


class TestMaskIO:
    def test_round_trip(self, tmp_path):
        mask = np.arange(16, dtype=np.uint8).reshape(4, 4)
        write_mask(mask, tmp_path / "m.png")
        np.testing.assert_array_equal(read_mask(tmp_path / "m.png"), mask)

    def test_rejects_rgb(self, tmp_path):
        from PIL import Image

        Image.new("RGB", (4, 4)).save(tmp_path / "rgb.png")
        with pytest.raises(FormatError):
            read_mask(tmp_path / "rgb.png")


class TestSidecar:
    def test_round_trip(self, tmp_path):
        entries = [("a/b.pfv", 8, 8, 16, "a/b_mask.png"), ("c.pfv", 32, 32, 768, "c.png")]
        write_sidecar(entries, tmp_path / "features.tsv")
        assert read_sidecar(tmp_path / "features.tsv") == entries
