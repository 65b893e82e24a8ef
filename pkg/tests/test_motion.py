import numpy as np
import pytest

from motionlift.motion import (KeypointSeq2D, ObjectKeypointSeq, SkeletonSpec,
                               concat_human_object, decompose, default_skeleton,
                               hip_exclusion_mask, pack_decomposition,
                               packed_to_global, packed_to_global_backward,
                               random_drop_mask, recompose, split_human_object,
                               unpack_decomposition)

from conftest import tiny_skeleton

CENTER = (500.0, 500.0)


def test_keypoint_seq_validation():
    with pytest.raises(ValueError):
        KeypointSeq2D(np.zeros((1, 1, 2)))  # K < 2
    with pytest.raises(ValueError):
        KeypointSeq2D(np.full((2, 3, 2), np.nan))
    seq = KeypointSeq2D(np.zeros((2, 3, 2)))
    assert seq.visibility.all()


def test_skeleton_validation():
    with pytest.raises(ValueError):
        SkeletonSpec(["a", "b"], left_hip=0, right_hip=0, pelvis=0)
    with pytest.raises(ValueError):
        SkeletonSpec(["a", "b"], left_hip=0, right_hip=2, pelvis=0)
    skel = default_skeleton()
    assert skel.K == 17
    assert skel.left_hip != skel.right_hip


def test_decompose_centered_sequence():
    skel = tiny_skeleton(3)
    coords = np.full((4, 3, 2), CENTER)
    dec = decompose(KeypointSeq2D(coords), skel, CENTER)
    assert np.allclose(dec.root, CENTER)
    assert np.allclose(dec.local, CENTER)


def test_decompose_translation_moves_root_only():
    skel = tiny_skeleton(5)
    rng = np.random.default_rng(3)
    coords = rng.uniform(200, 800, size=(6, 5, 2))
    dec0 = decompose(KeypointSeq2D(coords), skel, CENTER)
    dec1 = decompose(KeypointSeq2D(coords + np.array([10.0, 0.0])), skel, CENTER)
    assert np.allclose(dec1.root, dec0.root + np.array([10.0, 0.0]))
    assert np.allclose(dec1.local, dec0.local)


def test_decompose_recompose_round_trip():
    skel = tiny_skeleton(6)
    rng = np.random.default_rng(7)
    for _ in range(20):
        coords = rng.uniform(0, 1000, size=(5, 6, 2))
        vis = rng.random((5, 6)) > 0.3
        seq = KeypointSeq2D(coords, vis)
        back = recompose(decompose(seq, skel, CENTER), skel)
        assert np.abs(back.coords - coords).max() < 1e-9
        assert np.array_equal(back.visibility, vis)


def test_recompose_constant_root():
    skel = tiny_skeleton(4)
    dec = decompose(KeypointSeq2D(np.full((3, 4, 2), CENTER)), skel, CENTER)
    dec.root[:] = 5.0  # both hips at (5, 5)
    out = recompose(dec, skel)
    assert np.allclose(out.coords, 5.0)


def test_recompose_offset_is_hip_mean():
    skel = tiny_skeleton(3)
    dec = decompose(KeypointSeq2D(np.full((1, 3, 2), CENTER)), skel, CENTER)
    dec.root[0, 0] = (0.0, 0.0)
    dec.root[0, 1] = (2.0, 0.0)
    dec.local[0, 0] = (CENTER[0] + 3.0, CENTER[1])
    out = recompose(dec, skel)
    # local joint lands at its centered position plus the (1, 0) hip-mean offset
    assert np.allclose(out.coords[0, 2], (4.0, 0.0))


def test_hip_exclusion_mask():
    skel = tiny_skeleton(4)
    assert hip_exclusion_mask(skel, 4).tolist() == [False, False, True, True]
    skel2 = SkeletonSpec(["a", "b"], left_hip=0, right_hip=1, pelvis=0)
    assert not hip_exclusion_mask(skel2, 2).any()
    for K in (2, 4, 9, 17):
        sk = tiny_skeleton(K) if K > 2 else skel2
        assert hip_exclusion_mask(sk, K).sum() == K - 2


def test_random_drop_mask_limits():
    vis = np.ones((10, 5), dtype=bool)
    rng = np.random.default_rng(1)
    assert random_drop_mask(vis, 0.0, rng).all()
    assert not random_drop_mask(vis, 1.0, rng).any()
    with pytest.raises(ValueError):
        random_drop_mask(vis, 1.5, rng)


def test_random_drop_mask_rate_and_determinism():
    vis = np.ones((100, 100), dtype=bool)
    out = random_drop_mask(vis, 0.3, np.random.default_rng(5))
    frac = 1.0 - out.mean()
    assert abs(frac - 0.3) < 0.02
    again = random_drop_mask(vis, 0.3, np.random.default_rng(5))
    assert np.array_equal(out, again)


def test_concat_and_split():
    rng = np.random.default_rng(11)
    human = KeypointSeq2D(rng.uniform(0, 1000, (4, 17, 2)),
                          rng.random((4, 17)) > 0.2)
    static = np.array([True] * 6 + [False] * 2)
    frame_vis = np.broadcast_to(static, (4, 8)).copy()
    frame_vis[2, 0] = False
    obj = ObjectKeypointSeq(rng.uniform(0, 1000, (4, 8, 2)), static, frame_vis)
    merged = concat_human_object(human, obj)
    assert merged.K == 25
    assert np.array_equal(merged.coords[:, :17], human.coords)
    assert np.array_equal(merged.coords[:, 17:], obj.coords)
    h2, o2 = split_human_object(merged, 17, static)
    assert np.array_equal(h2.coords, human.coords)
    assert np.array_equal(h2.visibility, human.visibility)
    assert np.array_equal(o2.coords, obj.coords)
    assert np.array_equal(o2.frame_visibility, frame_vis & static)


def test_concat_empty_object():
    rng = np.random.default_rng(2)
    human = KeypointSeq2D(rng.uniform(0, 100, (3, 5, 2)))
    obj = ObjectKeypointSeq(np.zeros((3, 0, 2)), np.zeros(0, dtype=bool))
    out = concat_human_object(human, obj)
    assert np.array_equal(out.coords, human.coords)


def test_concat_frame_mismatch():
    human = KeypointSeq2D(np.zeros((3, 5, 2)))
    obj = ObjectKeypointSeq(np.zeros((4, 2, 2)), np.ones(2, dtype=bool))
    with pytest.raises(ValueError):
        concat_human_object(human, obj)


def test_pack_unpack_round_trip():
    skel = tiny_skeleton(7)
    rng = np.random.default_rng(13)
    seq = KeypointSeq2D(rng.uniform(0, 1000, (5, 7, 2)))
    dec = decompose(seq, skel, CENTER)
    packed = pack_decomposition(dec, skel)
    dec2 = unpack_decomposition(packed, skel, CENTER)
    assert np.array_equal(dec2.root, dec.root)
    assert np.array_equal(dec2.local, dec.local)
    # packed_to_global matches recompose
    glob = packed_to_global(packed, skel, CENTER)
    assert np.abs(glob - seq.coords).max() < 1e-9


def test_packed_to_global_backward_is_adjoint():
    skel = tiny_skeleton(6)
    rng = np.random.default_rng(17)
    x = rng.standard_normal((4, 6, 2))
    g = rng.standard_normal((4, 6, 2))
    # <g, A x> == <A^T g, x> for the linear part (center = 0)
    ax = packed_to_global(x, skel, (0.0, 0.0))
    atg = packed_to_global_backward(g, skel)
    assert abs(np.sum(g * ax) - np.sum(atg * x)) < 1e-9
