import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import random_frames
from gcdance import autograd as ag
from gcdance.metrics import kinetic_features
from gcdance.motion import (MotionClip, MotionError, NormStats, Skeleton, decode_gcmo, denormalize,
                            detect_foot_contacts, encode_gcmo, forward_kinematics, forward_kinematics_t,
                            load_gcmo, load_skeleton, matrix_to_rot6d, normalize, rot6d_to_matrix,
                            save_gcmo)
from gcdance.synth import BASE_HZ, FREQ_RATIO, genre_style, synth_genre_motion
from oracles import fk_recursive, gram_schmidt_6d, random_rotations


# rotations ----------------------------------------------------------------

def test_identity_6d():
    assert np.array_equal(rot6d_to_matrix(np.array([1.0, 0, 0, 0, 1, 0])), np.eye(3))
    assert np.array_equal(matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0])


def test_hand_gram_schmidt_case():
    r = np.array([0.9, 0.1, 0, 0.1, 0.9, 0])
    R = rot6d_to_matrix(r)
    assert np.allclose(R, gram_schmidt_6d(r), atol=1e-14)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_quarter_turn_about_z():
    Rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    assert np.allclose(matrix_to_rot6d(Rz), [0, 1, 0, -1, 0, 0])


def test_rot6d_round_trip_random():
    R = random_rotations(1000, seed=3)
    back = rot6d_to_matrix(matrix_to_rot6d(R))
    assert np.abs(back - R).max() < 1e-10


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_gram_schmidt_orthonormal(v):
    v = np.array(v)
    a, b = v[:3], v[3:]
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(np.cross(a, b)) < 1e-3 * np.linalg.norm(a) * max(np.linalg.norm(b), 1e-9):
        return
    R = rot6d_to_matrix(v)
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
    assert np.linalg.det(R) > 0


def test_rot6d_errors():
    with pytest.raises(MotionError):
        rot6d_to_matrix(np.array([0.0, 0, 0, 0, 1, 0]))
    with pytest.raises(MotionError):
        matrix_to_rot6d(np.diag([1.0, 1, -1]))
    with pytest.raises(MotionError):
        matrix_to_rot6d(np.ones((3, 3)))


# forward kinematics -----------------------------------------------------------

def test_identity_pose_gives_rest_offsets(skel52):
    frames = np.zeros((1, skel52.frame_dim))
    frames[0, :skel52.rot_dim] = np.tile([1, 0, 0, 0, 1, 0], skel52.n_joints)
    P = forward_kinematics(frames, skel52)[0]
    assert np.allclose(P, skel52.rest_positions())


def test_root_quarter_turn_single_child():
    sk = Skeleton(["root", "child"], [-1, 0], [[0, 0, 0], [1, 0, 0]])
    Rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    frame = np.concatenate([matrix_to_rot6d(Rz), [1, 0, 0, 0, 1, 0], [0, 0, 0], np.zeros(4)])
    P = forward_kinematics(frame[None], sk)[0]
    assert np.allclose(P[1], [0, 1, 0], atol=1e-15)


def test_fk_matches_recursive_oracle(skel52, rng):
    frames = random_frames(skel52, 3, rng)
    P = forward_kinematics(frames, skel52)
    for i in range(3):
        assert np.allclose(P[i], fk_recursive(frames[i], skel52.parents, skel52.offsets), atol=1e-12)


def test_fk_translation_equivariance(skel52, rng):
    frames = random_frames(skel52, 4, rng)
    d = np.array([0.3, -1.2, 2.5])
    shifted = frames.copy()
    shifted[:, skel52.rot_dim:skel52.rot_dim + 3] += d
    assert np.abs(forward_kinematics(shifted, skel52) - forward_kinematics(frames, skel52) - d).max() < 1e-9


def test_fk_rotation_equivariance(skel52, rng):
    frames = random_frames(skel52, 4, rng)
    Q = Rotation.random(random_state=5).as_matrix()
    rotated = frames.copy()
    R0 = rot6d_to_matrix(frames[:, :6])
    rotated[:, :6] = matrix_to_rot6d(Q @ R0)
    tr = slice(skel52.rot_dim, skel52.rot_dim + 3)
    rotated[:, tr] = frames[:, tr] @ Q.T
    P, Pq = forward_kinematics(frames, skel52), forward_kinematics(rotated, skel52)
    assert np.abs(Pq - P @ Q.T).max() < 1e-9


def test_fk_root_equals_translation(skel24, rng):
    frames = random_frames(skel24, 5, rng)
    P = forward_kinematics(frames, skel24)
    assert np.array_equal(P[:, 0], frames[:, skel24.rot_dim:skel24.rot_dim + 3])


def test_fk_tensor_matches_numpy(skel52, rng):
    frames = random_frames(skel52, 2, rng)[None]
    assert np.allclose(forward_kinematics_t(ag.Tensor(frames), skel52).value,
                       forward_kinematics(frames, skel52), atol=1e-12)


def test_fk_dimension_mismatch(skel52, skel24, rng):
    with pytest.raises(MotionError):
        forward_kinematics(random_frames(skel24, 2, rng), skel52)


# contacts -----------------------------------------------------------------

def _marker_track(skel, k, per_frame, height):
    P = np.zeros((k, skel.n_joints, 3))
    P[:, :, 2] = height
    P[:, :, 0] = np.arange(k)[:, None] * per_frame
    return P


def test_static_grounded_feet_all_contact(skel52):
    assert detect_foot_contacts(_marker_track(skel52, 6, 0.0, 0.0), skel52).min() == 1.0


def test_fast_feet_no_contact(skel52):
    assert detect_foot_contacts(_marker_track(skel52, 6, 0.1, 0.0), skel52).max() == 0.0


def test_threshold_is_strict(skel52):
    P = _marker_track(skel52, 3, 0.0, 0.0)
    P[2, :, 0] = 0.01  # moves exactly v_thresh between frames 1 and 2
    flags = detect_foot_contacts(P, skel52)
    assert flags[0].min() == 1.0 and flags[1].max() == 0.0
    P2 = _marker_track(skel52, 3, 0.0, 0.05)
    assert detect_foot_contacts(P2, skel52).max() == 0.0


def test_contacts_horizontal_invariance(skel52, rng):
    clip, _ = synth_genre_motion(1, 4, 40, 30, skel52)
    P = forward_kinematics(clip, skel52)
    moved = P + np.array([5.0, -3.0, 0.0])
    assert np.array_equal(detect_foot_contacts(P, skel52), detect_foot_contacts(moved, skel52))


def test_contacts_need_two_frames(skel52):
    with pytest.raises(MotionError):
        detect_foot_contacts(np.zeros((1, skel52.n_joints, 3)), skel52)


# normalization ------------------------------------------------------------

def test_normalization_round_trip_and_moments(skel52, rng):
    X = random_frames(skel52, 200, rng)
    X[:, 5] = 3.0  # constant channel
    st_ = NormStats.fit(X)
    Z = normalize(X, st_)
    assert np.abs(denormalize(Z, st_) - X).max() < 1e-9
    assert np.all(Z[:, 5] == 0)
    assert np.array_equal(Z[:, -4:], X[:, -4:])
    live = np.ones(X.shape[1], bool)
    live[[5]] = False
    live[-4:] = False
    assert np.allclose(Z[:, live].mean(0), 0, atol=1e-9)
    assert np.allclose(Z[:, live].std(0), 1, atol=1e-9)


def test_missing_stats_error(rng):
    with pytest.raises(MotionError):
        normalize(np.zeros((2, 319)), None)


# files ------------------------------------------------------------------------

def test_gcmo_round_trip(tmp_path, skel52, rng):
    clip = MotionClip(random_frames(skel52, 7, rng), 30, 52)
    save_gcmo(tmp_path / "a.gcmo", clip)
    back = load_gcmo(tmp_path / "a.gcmo")
    assert back.fps == 30 and back.k == 7
    assert np.array_equal(back.frames, clip.frames.astype(np.float32).astype(np.float64))
    raw = (tmp_path / "a.gcmo").read_bytes()
    assert raw[:4] == b"GCMO" and len(raw) == 24 + 7 * 319 * 4


def test_gcmo_rejects_garbage():
    with pytest.raises(MotionError):
        decode_gcmo(b"nope")
    bad = bytearray(encode_gcmo(MotionClip(np.zeros((2, 319)), 30, 52)))
    bad[4] = 9
    with pytest.raises(MotionError):
        decode_gcmo(bytes(bad))


def test_skeleton_presets(skel52, skel24):
    assert skel52.frame_dim == 319 and skel24.frame_dim == 151
    for g in ("hands", "legs", "upper", "heels", "toes", "neck"):
        assert skel52.group(g)
    with pytest.raises(MotionError):
        Skeleton(["a", "b"], [-1, -1], np.zeros((2, 3)))
    with pytest.raises(MotionError):
        Skeleton(["a", "b", "c"], [-1, 2, 0], np.zeros((3, 3)))


def test_skeleton_json_round_trip(tmp_path, skel52):
    import json

    p = tmp_path / "s.json"
    p.write_text(json.dumps(skel52.to_dict()))
    back = load_skeleton(str(p))
    assert np.array_equal(back.parents, skel52.parents) and np.array_equal(back.offsets, skel52.offsets)


# synthetic data ---------------------------------------------------------------

def test_synth_deterministic_and_shaped(skel52):
    a, ba = synth_genre_motion(2, 9, 60, 30, skel52)
    b, bb = synth_genre_motion(2, 9, 60, 30, skel52)
    assert a.frames.shape == (60, 319)
    assert a.frames.tobytes() == b.frames.tobytes() and ba == bb


def _dominant_hz(track, fps, pad=16):
    """Peak of the power spectrum summed over the columns of a (k, c) trajectory."""
    x = track - track.mean(0)
    n = len(x) * pad
    power = (np.abs(np.fft.rfft(x * np.hanning(len(x))[:, None], n, axis=0)) ** 2).sum(1)
    return np.fft.rfftfreq(n, 1 / fps)[np.argmax(power)]


def test_genre_frequencies_differ_by_ratio(skel52):
    fps = 30
    wrist = skel52.group("wrists")[0]
    f = []
    for g in (0, 1, 2):
        P = forward_kinematics(synth_genre_motion(g, 0, 600, fps, skel52)[0], skel52)
        f.append(_dominant_hz(P[:, wrist] - P[:, 0], fps))
    assert f[0] == pytest.approx(BASE_HZ, rel=0.02)
    assert f[1] / f[0] == pytest.approx(FREQ_RATIO, rel=0.03)
    assert f[2] / f[1] == pytest.approx(FREQ_RATIO, rel=0.03)


def test_amplitude_profiles_differ(skel52):
    assert genre_style(0, skel52).primary != genre_style(1, skel52).primary


def test_synth_beats_match_pauses(skel52):
    clip, beats = synth_genre_motion(3, 1, 120, 30, skel52)
    P = forward_kinematics(clip, skel52)
    speed = np.linalg.norm(np.gradient(P, axis=0), axis=-1).sum(-1)
    for f in beats["frames"]:
        if 2 <= f < 118:
            lo = max(0, f - 3)
            assert abs(int(np.argmin(speed[lo:f + 4])) + lo - f) <= 1


def test_same_genre_closer_than_cross_genre(skel52):
    # every within-genre pair is closer than every cross-genre pair
    feats = {g: np.stack([kinetic_features(synth_genre_motion(g, s, 60, 30, skel52)[0], skel52)
                          for s in range(50)]) for g in (0, 1, 2)}
    for g in feats:
        within = np.linalg.norm(feats[g][:, None] - feats[g][None], axis=-1).max()
        for h in feats:
            if h != g:
                across = np.linalg.norm(feats[g][:, None] - feats[h][None], axis=-1).min()
                assert within < across, (g, h, within, across)


def test_synth_errors(skel52):
    with pytest.raises(MotionError):
        synth_genre_motion(0, 0, 1, 30, skel52)
    with pytest.raises(MotionError):
        synth_genre_motion(5, 0, 10, 30, skel52, n_genres=3)
