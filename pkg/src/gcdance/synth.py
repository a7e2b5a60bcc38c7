"""Procedural genre-specific dance clips with paired beat tracks.

Each genre gets a base oscillation frequency and a joint-group amplitude
profile.  Every joint angle follows ``A_j * sin(2*pi*f*t + phase)``, so all
joints pause together at the extremes of the oscillation; those pause
frames are the kinematic beats and are emitted as the music beat track.
Clicks at positive extremes are louder than at negative ones so the track
also carries the phase sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motion import MotionClip, MotionError, Skeleton, axis_angle_to_matrix, detect_foot_contacts, \
    forward_kinematics, matrix_to_rot6d

BASE_HZ = 0.5
FREQ_RATIO = 1.25
FREQ_PERIOD = 5
PRIMARY_GROUPS = ("arms", "legs", "torso", "hands")
PRIMARY_AMP = 0.6
SECONDARY_AMP = 0.08
SWAY = 0.03


@dataclass
class GenreStyle:
    genre_id: int
    freq_hz: float
    amplitudes: np.ndarray  # (J,) radians
    axes: np.ndarray  # (J, 3) unit rotation axes
    primary: str


def genre_style(genre_id: int, skel: Skeleton, base_hz: float = BASE_HZ,
                ratio: float = FREQ_RATIO) -> GenreStyle:
    rng = np.random.default_rng([7919, genre_id])
    freq = base_hz * ratio ** (genre_id % FREQ_PERIOD)
    primary = PRIMARY_GROUPS[genre_id % len(PRIMARY_GROUPS)]
    J = skel.n_joints
    amps = np.full(J, SECONDARY_AMP)
    prim = [j for j in skel.group(primary) if j < J] if primary in skel.groups else []
    amps[prim] = PRIMARY_AMP
    # later genres in the cycle also excite a second group at half strength
    if genre_id >= len(PRIMARY_GROUPS):
        second = PRIMARY_GROUPS[(genre_id // len(PRIMARY_GROUPS) + genre_id) % len(PRIMARY_GROUPS)]
        if second != primary and second in skel.groups:
            amps[skel.group(second)] = np.maximum(amps[skel.group(second)], 0.5 * PRIMARY_AMP)
    amps *= rng.uniform(0.7, 1.3, size=J)
    amps[0] = 0.05
    axes = rng.standard_normal((J, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return GenreStyle(genre_id, float(freq), amps, axes, primary)


def synth_genre_motion(genre_id: int, seed: int, k: int, fps: int, skel: Skeleton,
                       n_genres: int | None = None, base_hz: float = BASE_HZ,
                       ratio: float = FREQ_RATIO):
    """Deterministic clip for (genre_id, seed); returns ``(clip, beats)``.

    ``beats`` holds ``frames`` (int indices), ``times`` (seconds) and
    ``accents`` (1.0 at positive extremes, 0.5 at negative ones).
    """
    if k < 2:
        raise MotionError("synthetic clips need at least 2 frames")
    if genre_id < 0 or (n_genres is not None and genre_id >= n_genres):
        raise MotionError(f"genre id {genre_id} outside vocabulary")
    style = genre_style(genre_id, skel, base_hz, ratio)
    rng = np.random.default_rng([seed, genre_id, 104729])
    phase = rng.uniform(0, 2 * np.pi)
    gain = rng.uniform(0.95, 1.05)
    t = np.arange(k) / fps
    w = 2 * np.pi * style.freq_hz
    s = np.sin(w * t + phase)
    angles = gain * style.amplitudes[None, :] * s[:, None]
    R = axis_angle_to_matrix(angles[..., None] * style.axes[None, :, :])
    rot6 = matrix_to_rot6d(R)
    trans = np.zeros((k, 3))
    trans[:, 0] = SWAY * gain * s
    trans[:, 2] = skel.root_height
    frames = np.concatenate([rot6.reshape(k, -1), trans, np.zeros((k, 4))], axis=1)
    pos = forward_kinematics(frames, skel)
    frames[:, -4:] = detect_foot_contacts(pos, skel)
    clip = MotionClip(frames, fps=fps, n_joints=skel.n_joints)

    # extremes of sin: w t + phase = pi/2 + n pi
    n_lo = int(np.floor((phase - np.pi / 2) / np.pi)) - 1
    n_hi = int(np.ceil((w * (k - 1) / fps + phase - np.pi / 2) / np.pi)) + 1
    times, accents = [], []
    for n in range(n_lo, n_hi + 1):
        tb = (np.pi / 2 + n * np.pi - phase) / w
        if 0 <= tb <= (k - 1) / fps:
            times.append(tb)
            accents.append(1.0 if n % 2 == 0 else 0.5)
    order = np.argsort(times)
    times = [float(times[i]) for i in order]
    accents = [accents[i] for i in order]
    beats = {"times": times, "frames": [int(round(x * fps)) for x in times], "accents": accents}
    return clip, beats
