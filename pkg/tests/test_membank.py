"""Memory bank construction, exact top-k search, shard invariance."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewbench.binning import load_manifest
from viewbench.errors import DomainError, EmptyBankError, StructuralError
from viewbench.membank import (
    bank_from_entries,
    build_bank,
    load_bank,
    save_bank,
    search,
    shard_bank,
)


def random_unit(rng, n, dim):
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_bank(n=100, dim=16, num_classes=4, seed=0, capacity=None):
    rng = np.random.default_rng(seed)
    feats = random_unit(rng, n, dim)
    labels = rng.integers(0, num_classes, size=n)
    return bank_from_entries(
        feats, labels, capacity=capacity or n, num_classes=num_classes, seed=seed
    )


def brute_force_topk(features, query, k):
    """Index-tie-broken exact top-k, computed independently per pair."""
    sims = [float(np.dot(features[i], query)) for i in range(len(features))]
    order = sorted(range(len(features)), key=lambda i: (-sims[i], i))
    return order[:k], [sims[i] for i in order[:k]]


class TestBuildBank:
    def test_under_capacity_keeps_all(self):
        rng = np.random.default_rng(1)
        feats = random_unit(rng, 8, 4)  # 2 images x 4 patches
        bank = bank_from_entries(feats, [0, 1, 2, 3, 0, 1, 2, 3], capacity=100, num_classes=4)
        assert len(bank) == 8

    def test_subsampling_is_deterministic(self):
        rng = np.random.default_rng(2)
        feats = random_unit(rng, 8, 4)
        labels = [0, 1, 2, 3, 0, 1, 2, 3]
        banks = [
            bank_from_entries(feats, labels, capacity=5, num_classes=4, seed=42)
            for _ in range(3)
        ]
        for b in banks[1:]:
            np.testing.assert_array_equal(b.features, banks[0].features)
            np.testing.assert_array_equal(b.labels, banks[0].labels)
        assert len(banks[0]) == 5

    def test_capacity_respected(self):
        bank = make_bank(n=50, capacity=50)
        assert len(bank) <= bank.capacity

    def test_entries_unit_normalized(self):
        rng = np.random.default_rng(3)
        feats = 7.3 * random_unit(rng, 10, 8)
        bank = bank_from_entries(feats, [0] * 10, capacity=10, num_classes=1)
        np.testing.assert_allclose(np.linalg.norm(bank.features, axis=1), 1.0, atol=1e-6)

    def test_zero_candidates(self):
        with pytest.raises(EmptyBankError):
            bank_from_entries(np.empty((0, 4)), [], capacity=10, num_classes=2)

    def test_zero_norm_entry_rejected(self):
        feats = np.zeros((2, 4))
        feats[0, 0] = 1.0
        with pytest.raises(DomainError, match="zero norm"):
            bank_from_entries(feats, [0, 1], capacity=5, num_classes=2)

    def test_balanced_policy_covers_classes(self):
        rng = np.random.default_rng(4)
        feats = random_unit(rng, 90, 8)
        labels = np.array([0] * 80 + [1] * 5 + [2] * 5)
        bank = bank_from_entries(
            feats, labels, capacity=30, num_classes=3, sample_policy="balanced"
        )
        counts = np.bincount(bank.labels, minlength=3)
        assert len(bank) == 30
        assert counts[1] == 5 and counts[2] == 5  # small classes kept whole
        assert counts[0] == 20

    def test_extreme_reference_bin_only(self, synthetic_fixture):
        manifest_path, roots = synthetic_fixture
        manifest = load_manifest(manifest_path)
        bank = build_bank(
            manifest, {0.0}, capacity=10_000, feature_root=roots["alpha"]
        )
        assert {center for _, center, _ in bank.sources} == {0.0}
        # 12 instances x 64 cells at the 0-degree bin
        assert len(bank) == 12 * 64

    def test_unknown_reference_bin(self, synthetic_fixture):
        manifest_path, roots = synthetic_fixture
        manifest = load_manifest(manifest_path)
        with pytest.raises(DomainError):
            build_bank(manifest, {12.5}, capacity=100, feature_root=roots["alpha"])

    def test_dim_mismatch_across_files(self, tmp_path, synthetic_fixture):
        from viewbench.featstore import (
            PatchFeatureMap,
            feature_relpath,
            write_feature_file,
        )

        manifest_path, roots = synthetic_fixture
        manifest = load_manifest(manifest_path)
        import shutil

        bad_root = tmp_path / "bad"
        shutil.copytree(roots["alpha"], bad_root)
        first = next(iter(manifest.iter_entries(bins={0.0})))[2]
        write_feature_file(
            PatchFeatureMap.from_array(np.ones((8, 8, 5), dtype=np.float32)),
            bad_root / feature_relpath(first.image),
        )
        with pytest.raises(StructuralError, match="dim mismatch"):
            build_bank(manifest, {0.0}, capacity=10_000, feature_root=bad_root)


class TestSearch:
    def test_stored_entry_found_with_unit_similarity(self):
        bank = make_bank(n=32, dim=8)
        result = search(bank, bank.features[7][None, :], k=1)
        assert result.indices[0, 0] == 7
        assert result.similarities[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_query(self):
        feats = np.eye(4)[:3]
        bank = bank_from_entries(feats, [0, 1, 2], capacity=3, num_classes=3)
        result = search(bank, np.array([[0.0, 0.0, 0.0, 1.0]]), k=3)
        np.testing.assert_allclose(result.similarities, 0.0, atol=1e-6)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        bank = make_bank(n=2000, dim=16, seed=5)
        queries = random_unit(rng, 20, 16)
        result = search(bank, queries, k=30)
        for qi in range(20):
            idx, sims = brute_force_topk(bank.features, queries[qi], 30)
            assert result.indices[qi].tolist() == idx

    def test_duplicate_entries_tie_break_by_index(self):
        base = random_unit(np.random.default_rng(6), 3, 8)
        feats = base[[0, 1, 2, 0, 1, 0]]  # exact duplicates at higher indices
        bank = bank_from_entries(feats, [0] * 6, capacity=6, num_classes=1)
        result = search(bank, base[0][None, :], k=3)
        assert result.indices[0].tolist() == [0, 3, 5]

    def test_k_out_of_range(self):
        bank = make_bank(n=10)
        with pytest.raises(DomainError):
            search(bank, bank.features[:1], k=11)
        with pytest.raises(DomainError):
            search(bank, bank.features[:1], k=0)

    def test_zero_norm_query_names_index(self):
        bank = make_bank(n=10, dim=4)
        queries = np.ones((3, 4))
        queries[1] = 0.0
        with pytest.raises(DomainError, match="query 1"):
            search(bank, queries, k=2)

    def test_non_finite_query_names_index(self):
        bank = make_bank(n=10, dim=4)
        queries = np.ones((3, 4))
        queries[2, 0] = np.inf
        with pytest.raises(DomainError, match="query 2"):
            search(bank, queries, k=2)

    def test_dim_mismatch(self):
        bank = make_bank(n=10, dim=4)
        with pytest.raises(DomainError, match="dim"):
            search(bank, np.ones((1, 5)), k=1)

    def test_similarity_bounds(self):
        rng = np.random.default_rng(8)
        bank = make_bank(n=300, dim=8, seed=8)
        result = search(bank, random_unit(rng, 40, 8), k=30)
        assert (result.similarities >= -1.0 - 1e-6).all()
        assert (result.similarities <= 1.0 + 1e-6).all()

    def test_sorted_descending(self):
        rng = np.random.default_rng(9)
        bank = make_bank(n=100, dim=8, seed=9)
        result = search(bank, random_unit(rng, 10, 8), k=20)
        assert (np.diff(result.similarities, axis=1) <= 0).all()


class TestSharding:
    def test_single_shard_identity(self):
        bank = make_bank(n=20)
        assert shard_bank(bank, 1).shard_bounds == ((0, 20),)

    def test_singleton_shards_still_exact(self):
        rng = np.random.default_rng(10)
        bank = make_bank(n=40, dim=8, seed=10)
        sharded = shard_bank(bank, 40)
        queries = random_unit(rng, 5, 8)
        base = search(bank, queries, k=7)
        got = search(sharded, queries, k=7)
        np.testing.assert_array_equal(got.indices, base.indices)
        np.testing.assert_array_equal(got.similarities, base.similarities)

    @pytest.mark.parametrize("n_shards", [2, 3, 7])
    def test_sharded_equals_unsharded(self, n_shards):
        rng = np.random.default_rng(11)
        bank = make_bank(n=500, dim=16, seed=11)
        queries = random_unit(rng, 25, 16)
        base = search(bank, queries, k=30)
        got = search(shard_bank(bank, n_shards), queries, k=30)
        np.testing.assert_array_equal(got.indices, base.indices)
        np.testing.assert_array_equal(got.similarities, base.similarities)

    def test_sharding_with_heavy_duplicates(self):
        # stress exact tie handling across shard boundaries
        base = random_unit(np.random.default_rng(12), 4, 8)
        feats = base[np.arange(64) % 4]
        bank = bank_from_entries(feats, np.arange(64) % 3, capacity=64, num_classes=3)
        queries = base
        expect = search(bank, queries, k=30)
        for n_shards in (2, 5, 9, 64):
            got = search(shard_bank(bank, n_shards), queries, k=30)
            np.testing.assert_array_equal(got.indices, expect.indices)
            np.testing.assert_array_equal(got.similarities, expect.similarities)

    def test_shard_count_out_of_range(self):
        bank = make_bank(n=10)
        for bad in (0, 11):
            with pytest.raises(DomainError):
                shard_bank(bank, bad)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 60), st.integers(0, 2**32 - 1))
    def test_shard_invariance_property(self, n_shards, seed):
        rng = np.random.default_rng(seed)
        n = max(n_shards, int(rng.integers(n_shards, 80)))
        bank = make_bank(n=n, dim=6, seed=seed % 1000)
        queries = random_unit(rng, 4, 6)
        k = int(rng.integers(1, n + 1))
        base = search(bank, queries, k=k)
        got = search(shard_bank(bank, n_shards), queries, k=k)
        np.testing.assert_array_equal(got.indices, base.indices)
        np.testing.assert_array_equal(got.similarities, base.similarities)


class TestConcurrency:
    def test_concurrent_searches_match_serial(self):
        # searches are pure: any interleaving equals serial execution
        from concurrent.futures import ThreadPoolExecutor

        rng = np.random.default_rng(13)
        bank = shard_bank(make_bank(n=400, dim=16, seed=13), 3)
        query_sets = [random_unit(rng, 8, 16) for _ in range(12)]
        serial = [search(bank, q, k=15) for q in query_sets]
        with ThreadPoolExecutor(max_workers=6) as pool:
            concurrent = list(pool.map(lambda q: search(bank, q, k=15), query_sets))
        for a, b in zip(serial, concurrent):
            np.testing.assert_array_equal(a.indices, b.indices)
            np.testing.assert_array_equal(a.similarities, b.similarities)


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        bank = make_bank(n=12, dim=6, num_classes=3)
        path = tmp_path / "bank.mbk"
        save_bank(bank, path)
        loaded = load_bank(path, capacity=bank.capacity, num_classes=bank.num_classes)
        assert len(loaded) == len(bank)
        np.testing.assert_array_equal(loaded.labels, bank.labels)
        # f32 storage: features match to f32 precision after re-normalization
        np.testing.assert_allclose(loaded.features, bank.features, atol=1e-6)
        assert loaded.sources == bank.sources

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bank.mbk"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        from viewbench.errors import FormatError

        with pytest.raises(FormatError):
            load_bank(path)
