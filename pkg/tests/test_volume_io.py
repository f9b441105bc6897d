"""Containers, phantoms, splits: bit-exact round trips and partitions."""

import io
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from voxseg import volume_io as vio


def _phantom(seed=7, dims=(32, 32, 32), lesions=1, noise=0.0):
    return vio.generate_phantom(seed, dims, lesion_count=lesions, noise_sd=noise)


class TestPhantom:
    def test_single_lesion_nonempty_and_connected(self):
        _, mask = _phantom(seed=7, noise=0.0)
        assert mask.data.sum() > 0
        # 6-connectivity: one connected component
        structure = ndimage.generate_binary_structure(3, 1)
        _, n = ndimage.label(mask.data, structure=structure)
        assert n == 1

    def test_bit_identical_for_identical_seeds(self):
        v1, m1 = _phantom(seed=42, noise=0.05)
        v2, m2 = _phantom(seed=42, noise=0.05)
        assert np.array_equal(v1.data, v2.data)
        assert np.array_equal(m1.data, m2.data)
        v3, _ = _phantom(seed=43, noise=0.05)
        assert not np.array_equal(v1.data, v3.data)

    def test_disjoint_lesions_union_count(self):
        # oracle: rasterize each blob independently, count, compare to union
        _, mask, parts = vio.phantom_components(11, (32, 32, 32), lesion_count=2)
        per_blob = [int(p.sum()) for p in parts]
        assert all(c > 0 for c in per_blob)
        assert int(mask.data.sum()) == sum(per_blob)

    def test_values_normalized_and_finite(self):
        vol, _ = _phantom(seed=3, noise=0.1)
        assert vol.data.min() >= 0.0 and vol.data.max() <= 1.0
        assert np.all(np.isfinite(vol.data))

    def test_small_dims_rejected(self):
        with pytest.raises(vio.VolumeError) as err:
            _phantom(dims=(8, 32, 32))
        assert err.value.code == "bad_args"

    def test_bad_args_rejected(self):
        with pytest.raises(vio.VolumeError):
            _phantom(lesions=0)
        with pytest.raises(vio.VolumeError):
            _phantom(noise=-1.0)


class TestContainer:
    def test_round_trip_phantom(self, tmp_path):
        vol, mask = _phantom(seed=5, noise=0.02)
        vp, mp = tmp_path / "c.img.dvol", tmp_path / "c.msk.dvol"
        vio.write_volume(vol, vp)
        vio.write_mask(mask, mp, spacing=vol.spacing)
        rv = vio.read_volume(vp)
        rm = vio.read_mask(mp)
        assert rv.dims == vol.dims and rv.channels == vol.channels
        assert rv.spacing == vol.spacing
        assert np.array_equal(rv.data, vol.data)
        assert np.array_equal(rm.data, mask.data)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31), channels=st.integers(1, 3),
           dims=st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)))
    def test_round_trip_random_volumes(self, tmp_path_factory, seed, channels, dims):
        rng = np.random.default_rng(seed)
        data = rng.standard_normal(dims + (channels,)).astype(np.float32)
        spacing = tuple(float(s) for s in rng.uniform(0.1, 3.0, 3))
        vol = vio.Volume(dims=dims, channels=channels, spacing=spacing, data=data)
        path = tmp_path_factory.mktemp("rt") / "v.dvol"
        vio.write_volume(vol, path)
        back = vio.read_volume(path)
        assert back.spacing == spacing
        assert np.array_equal(back.data, data)

    def test_zero_volume_from_handwritten_header(self, tmp_path):
        path = tmp_path / "zeros.dvol"
        with open(path, "wb") as fh:
            fh.write(b"DEAPVOL1\ndims 2 2 2\nchannels 1\nspacing 1.0 1.0 1.0\ndtype f32\n")
            fh.write(np.zeros(8, dtype="<f4").tobytes())
        vol = vio.read_volume(path)
        assert vol.dims == (2, 2, 2)
        np.testing.assert_array_equal(vol.data, np.zeros((2, 2, 2, 1), np.float32))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dvol"
        path.write_bytes(b"NOTAVOL1\n")
        with pytest.raises(vio.VolumeError) as err:
            vio.read_volume(path)
        assert err.value.code == "bad_magic"

    def test_truncated_payload(self, tmp_path):
        vol, _ = _phantom(seed=5)
        path = tmp_path / "t.dvol"
        vio.write_volume(vol, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(vio.VolumeError) as err:
            vio.read_volume(path)
        assert err.value.code == "payload_mismatch"

    def test_oversized_payload(self, tmp_path):
        vol, _ = _phantom(seed=5)
        path = tmp_path / "o.dvol"
        vio.write_volume(vol, path)
        with open(path, "ab") as fh:
            fh.write(b"\x00\x00\x00\x00")
        with pytest.raises(vio.VolumeError) as err:
            vio.read_volume(path)
        assert err.value.code == "payload_mismatch"

    def test_non_finite_rejected_on_write(self, tmp_path):
        vol, _ = _phantom(seed=5)
        vol.data[0, 0, 0, 0] = np.nan
        with pytest.raises(vio.VolumeError) as err:
            vio.write_volume(vol, tmp_path / "nan.dvol")
        assert err.value.code == "non_finite"

    def test_mask_dtype_routing(self, tmp_path):
        vol, mask = _phantom(seed=5)
        vp, mp = tmp_path / "v.dvol", tmp_path / "m.dvol"
        vio.write_volume(vol, vp)
        vio.write_mask(mask, mp)
        with pytest.raises(vio.VolumeError):
            vio.read_volume(mp)
        with pytest.raises(vio.VolumeError):
            vio.read_mask(vp)


class TestSplits:
    def test_paper_ratio_sizes(self):
        split = vio.split_dataset([f"c{i}" for i in range(10)], seed=3)
        assert (len(split.train), len(split.val), len(split.test)) == (7, 1, 2)

    def test_degenerate_all_train(self):
        split = vio.split_dataset(["only"], ratios=(1.0, 0.0, 0.0), seed=1)
        assert split.train == ["only"] and not split.val and not split.test

    def test_two_seeds_same_sizes_different_orderings(self):
        ids = [f"c{i:02d}" for i in range(20)]
        s1 = vio.split_dataset(ids, seed=1)
        s2 = vio.split_dataset(ids, seed=2)
        assert (len(s1.train), len(s1.val), len(s1.test)) == (14, 2, 4)
        assert (len(s2.train), len(s2.val), len(s2.test)) == (14, 2, 4)
        assert s1.train != s2.train  # different shuffles
        assert sorted(s1.all_cases()) == sorted(s2.all_cases()) == ids

    def test_duplicates_rejected(self):
        with pytest.raises(vio.VolumeError):
            vio.split_dataset(["a", "a", "b"] + [f"c{i}" for i in range(8)], seed=0)

    def test_too_few_for_three_way(self):
        with pytest.raises(vio.VolumeError):
            vio.split_dataset(["a", "b", "c"], seed=0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(10, 40), st.integers(0, 2**31))
    def test_split_partitions_exactly(self, n, seed):
        ids = [f"case{i}" for i in range(n)]
        split = vio.split_dataset(ids, seed=seed)
        assert sorted(split.all_cases()) == sorted(ids)
        assert not (set(split.train) & set(split.val))
        assert not (set(split.train) & set(split.test))
        assert not (set(split.val) & set(split.test))


class TestKFold:
    def test_five_fold_holdouts(self):
        ids = [f"c{i}" for i in range(10)]
        folds = vio.kfold(ids, k=5, seed=2)
        holdouts = [h for _, h in folds]
        assert all(len(h) == 2 for h in holdouts)
        flat = sum(holdouts, [])
        assert sorted(flat) == sorted(ids)  # pairwise disjoint, full cover

    def test_train_holdout_complementary(self):
        ids = [f"c{i}" for i in range(7)]
        for train, hold in vio.kfold(ids, k=3, seed=5):
            assert sorted(train + hold) == sorted(ids)

    def test_k2_on_5_deterministic_sizes(self):
        ids = list("abcde")
        folds1 = vio.kfold(ids, k=2, seed=9)
        folds2 = vio.kfold(ids, k=2, seed=9)
        assert folds1 == folds2
        sizes = sorted(len(h) for _, h in folds1)
        assert sizes == [2, 3]

    def test_too_few_cases(self):
        with pytest.raises(vio.VolumeError):
            vio.kfold(["a", "b"], k=3, seed=0)
