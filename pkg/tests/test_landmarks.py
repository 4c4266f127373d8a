import math

import numpy as np
import pytest

from cephalo3d.errors import FileFormatError, InvalidArgumentError, OutOfBoundsError
from cephalo3d.landmarks import (
    LANDMARK_GROUPS,
    LANDMARK_NAMES,
    Group,
    LandmarkSet,
    decode_prediction,
    encode_targets,
    gaussian_profile,
    group_members,
    landmarks_voxel_to_world,
    landmarks_world_to_voxel,
    read_landmarks,
    round_half_away,
    write_landmarks,
)
from cephalo3d.volgrid import Volume

GRID = Volume(np.zeros((128, 128, 152)), spacing=(2.0, 2.0, 2.0))


def test_catalog_partition():
    assert len(LANDMARK_NAMES) == 12
    sizes = {g: len(group_members(g)) for g in Group}
    assert sizes == {Group.MIDSAGITTAL: 3, Group.HORIZONTAL: 4, Group.MANDIBLE: 5}
    members = [n for g in Group for n in group_members(g)]
    assert sorted(members) == sorted(LANDMARK_NAMES)
    assert set(group_members(Group.MIDSAGITTAL)) == {"Na", "Bregma", "CFM"}
    assert set(group_members(Group.HORIZONTAL)) == {"R_Or", "L_Or", "R_Po", "L_Po"}
    assert LANDMARK_GROUPS["L_F"] is Group.MANDIBLE


def test_unknown_landmark_rejected():
    with pytest.raises(InvalidArgumentError):
        LandmarkSet({"Gonion": (0, 0, 0)})


def test_encode_peaks_at_landmark():
    lm = LandmarkSet({"Na": (64, 82, 24)}, frame="voxel")
    t = encode_targets(lm, (128, 128, 152), sigma=3.0)["Na"]
    assert (np.argmax(t.tx), np.argmax(t.ty), np.argmax(t.tz)) == (64, 82, 24)
    assert (len(t.tx), len(t.ty), len(t.tz)) == (128, 128, 152)


def test_encode_neighbor_ratio_sigma3():
    t = gaussian_profile(64, 30, 3.0)
    # closed form by hand: exp(-1 / (2 * 9))
    assert math.isclose(t[31] / t[30], 0.9459594689067654, rel_tol=1e-12)
    assert t[29] == t[31]


@pytest.mark.parametrize("sigma", [0.5, 1, 2, 3, 5, 12])
@pytest.mark.parametrize("mu", [0, 1, 17, 62, 63])
def test_profile_sums_to_one_and_positive(sigma, mu):
    t = gaussian_profile(64, mu, sigma)
    assert abs(t.sum() - 1.0) < 1e-9
    assert np.all(t > 0)
    # unimodal: non-decreasing up to mu, non-increasing after
    assert np.all(np.diff(t[:mu + 1]) >= 0) and np.all(np.diff(t[mu:]) <= 0)


def test_encode_rejects_bad_input():
    lm = LandmarkSet({"Me": (10, 10, 200)}, frame="voxel")
    with pytest.raises(OutOfBoundsError, match="Me"):
        encode_targets(lm, (128, 128, 152))
    with pytest.raises(InvalidArgumentError):
        encode_targets(LandmarkSet({"Me": (1, 1, 1)}, frame="voxel"), (4, 4, 4), sigma=0)


def test_decode_examples():
    onehot = np.zeros(64)
    onehot[40] = 1
    assert decode_prediction([onehot, onehot, onehot]).tolist() == [40, 40, 40]
    uniform = np.full(10, 0.1)
    assert decode_prediction([uniform] * 3).tolist() == [0, 0, 0]
    with pytest.raises(InvalidArgumentError):
        decode_prediction([np.array([]), onehot, onehot])


def test_decode_expectation_mode():
    p = np.zeros(9)
    p[[3, 5]] = 0.5
    assert decode_prediction([p, p, p], mode="expectation").tolist() == [4.0, 4.0, 4.0]


@pytest.mark.parametrize("sigma", [1, 2, 3, 5])
def test_encode_decode_round_trip_exhaustive(sigma):
    for mu in range(64):
        t = gaussian_profile(64, mu, sigma)
        assert decode_prediction([t, t, t])[0] == mu


def test_decode_scale_invariant(rng):
    vecs = [rng.random(n) for n in (20, 30, 40)]
    base = decode_prediction([v / v.sum() for v in vecs])
    assert np.array_equal(base, decode_prediction([7.5 * v / v.sum() for v in vecs]))


def test_world_to_voxel_landmarks():
    lm = LandmarkSet({"Na": (128.0, 164.0, 48.0), "Me": (128.9, 10.0, 20.0)})
    vox = landmarks_world_to_voxel(lm, GRID)
    assert vox.frame == "voxel"
    assert vox["Na"].tolist() == [64, 82, 24]
    assert vox["Me"][0] == 64  # 64.45 rounds down
    back = landmarks_voxel_to_world(vox, GRID)
    assert back["Na"].tolist() == [128.0, 164.0, 48.0]


def test_world_to_voxel_out_of_grid():
    with pytest.raises(OutOfBoundsError, match="Bregma"):
        landmarks_world_to_voxel(LandmarkSet({"Bregma": (0, 0, 400)}), GRID)


def test_round_half_away_from_zero():
    assert round_half_away([0.5, 1.5, -0.5, 2.49, -2.5]).tolist() == [1, 2, -1, 2, -3]


def test_landmark_file_round_trip(tmp_path, rng):
    lm = LandmarkSet({n: rng.uniform(0, 200, 3) for n in LANDMARK_NAMES})
    write_landmarks(lm, tmp_path / "lm.txt")
    text = (tmp_path / "lm.txt").read_text()
    assert text.startswith("#frame=world\nNa ")
    back = read_landmarks(tmp_path / "lm.txt")
    assert back.frame == "world" and back.complete
    for n in LANDMARK_NAMES:
        assert np.array_equal(back[n], lm[n])


@pytest.mark.parametrize("body", ["Na 1 2\n", "Gonion 1 2 3\n", "Na a b c\n"])
def test_landmark_file_errors(tmp_path, body):
    (tmp_path / "bad.txt").write_text("#frame=voxel\n" + body)
    with pytest.raises(FileFormatError):
        read_landmarks(tmp_path / "bad.txt")
    (tmp_path / "nohdr.txt").write_text("Na 1 2 3\n")
    with pytest.raises(FileFormatError):
        read_landmarks(tmp_path / "nohdr.txt")
