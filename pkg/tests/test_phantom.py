import numpy as np
import pytest
from scipy.ndimage import maximum_filter

from cephalo3d.errors import InvalidArgumentError
from cephalo3d.landmarks import LANDMARK_NAMES, landmarks_world_to_voxel
from cephalo3d.phantom import (
    PhantomSpec,
    generate,
    generate_dataset,
    read_dataset,
    sample_seed,
    split_indices,
    write_dataset,
)
from cephalo3d.volgrid import GridSpec, preprocess

PAIRS = [("R_Or", "L_Or"), ("R_Po", "L_Po"), ("R_Cor", "L_Cor"), ("R_F", "L_F")]


def near_bone(data, vox, threshold):
    """True when some voxel in the 3x3x3 neighbourhood reaches ``threshold``."""
    lo = np.maximum(vox - 1, 0)
    hi = np.minimum(vox + 2, data.shape)
    return data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]].max() >= threshold


def test_zero_jitter_mirror_symmetry():
    vol, lm = generate(PhantomSpec(jitter=0.0))
    x_mid = lm["Na"][0]
    assert lm["Bregma"][0] == pytest.approx(x_mid, abs=1e-9)
    for r, l in PAIRS:
        assert abs(lm[r][0] + lm[l][0] - 2 * x_mid) <= 1e-9
        assert lm[r][1:] == pytest.approx(lm[l][1:], abs=1e-9)
        assert lm[r][0] < x_mid  # right side sits at lower x


def test_same_seed_is_bitwise_identical():
    a = generate(PhantomSpec(seed=11))
    b = generate(PhantomSpec(seed=11))
    assert a[0].data.tobytes() == b[0].data.tobytes()
    for n in LANDMARK_NAMES:
        assert a[1][n].tobytes() == b[1][n].tobytes()
    c = generate(PhantomSpec(seed=12))
    assert c[0].data.tobytes() != a[0].data.tobytes()


def test_volume_contract():
    spec = PhantomSpec()
    vol, lm = generate(spec)
    assert vol.dims == spec.dims and vol.spacing == (2.0, 2.0, 2.0) and not vol.normalized
    assert set(np.unique(vol.data)) <= {-1000.0, 40.0, 1000.0}
    assert lm.complete and lm.frame == "world"


@pytest.mark.parametrize("seed", range(8))
def test_landmarks_sit_on_bone(seed):
    spec = PhantomSpec(seed=seed)
    vol, lm = generate(spec)
    vox = landmarks_world_to_voxel(lm, vol)
    for n in LANDMARK_NAMES:
        assert near_bone(vol.data, vox[n].astype(int), spec.bone_hu - 1), n


def test_bone_consistency_survives_preprocessing():
    spec = PhantomSpec(seed=3)
    vol, lm = generate(spec)
    out = preprocess(vol, GridSpec(target_dims=(64, 64, 76)))
    vox = landmarks_world_to_voxel(lm, out)
    local_max = maximum_filter(out.data, size=3, mode="nearest")
    for n in LANDMARK_NAMES:
        v = vox[n].astype(int)
        assert local_max[tuple(v)] == 1.0, n


def test_noise_option_changes_values():
    quiet, _ = generate(PhantomSpec(seed=2))
    noisy, _ = generate(PhantomSpec(seed=2, noise_hu=30.0))
    diff = noisy.data - quiet.data
    assert 0 < np.abs(diff).max() <= 30.0


@pytest.mark.parametrize("kwargs", [
    {"bone_hu": 30.0},
    {"background_hu": 100.0},
    {"semi_axes_frac": (0.49, 0.39, 0.30)},
    {"jitter": 0.6},
])
def test_spec_invariants(kwargs):
    with pytest.raises(InvalidArgumentError):
        PhantomSpec(**kwargs)


def test_jitter_keeps_landmarks_in_grid():
    spec = PhantomSpec()
    hi = spec.extent
    for k in range(12):
        _, lm = generate(PhantomSpec(seed=sample_seed(99, k)))
        pts = lm.as_array()
        assert np.all(pts >= 0) and np.all(pts <= hi)


def test_dataset_split_27():
    train, test = split_indices(27, (2, 1), seed=0)
    assert len(train) == 18 and len(test) == 9
    assert not set(train) & set(test)
    assert sorted(train + test) == list(range(27))
    assert split_indices(27, (2, 1), seed=0) == (train, test)


def test_dataset_single_and_deterministic():
    one = generate_dataset(1, PhantomSpec(seed=5))
    assert len(one) == 1
    again = generate_dataset(1, PhantomSpec(seed=5))
    assert one[0][0].data.tobytes() == again[0][0].data.tobytes()
    with pytest.raises(InvalidArgumentError):
        generate_dataset(0, PhantomSpec())


def test_dataset_directory_round_trip(tmp_path):
    base = PhantomSpec(seed=7)
    samples = generate_dataset(2, base)
    seeds = [sample_seed(7, k) for k in range(2)]
    write_dataset(tmp_path, samples, seeds)
    assert (tmp_path / "manifest.txt").read_text().splitlines() == [f"sample_{k}\t{s}" for k, s in enumerate(seeds)]
    back = read_dataset(tmp_path)
    assert [name for name, _, _ in back] == ["sample_0", "sample_1"]
    for (v, lm), (_, v2, lm2) in zip(samples, back):
        assert np.array_equal(v.data, v2.data)
        for n in LANDMARK_NAMES:
            assert np.array_equal(lm[n], lm2[n])
