"""Motion representation, rotations, forward kinematics and the GCMO format.

A frame is laid out as ``J*6`` rotation entries (joint-major, each joint's
6D vector is the first two columns of its local rotation matrix), then the
3-vector root translation, then 4 foot-contact flags
(left heel, right heel, left toe, right toe).  The world is z-up with the
ground plane at z = 0.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import autograd as ag
from .io_utils import atomic_write_bytes

N_CONTACTS = 4
V_THRESH = 0.01  # length units / frame
H_THRESH = 0.05  # length units
STD_FLOOR = 1e-6

GCMO_MAGIC = b"GCMO"
GCMO_VERSION = 1


class MotionError(ValueError):
    pass


# ---------------------------------------------------------------- skeleton

@dataclass
class Skeleton:
    names: list[str]
    parents: np.ndarray
    offsets: np.ndarray
    groups: dict[str, list[int]] = field(default_factory=dict)
    root_height: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=int)
        self.offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        J = len(self.parents)
        if len(self.names) != J or self.offsets.shape[0] != J:
            raise MotionError("skeleton names/parents/offsets length mismatch")
        roots = np.flatnonzero(self.parents < 0)
        if roots.tolist() != [0]:
            raise MotionError("skeleton must have exactly one root at index 0")
        for j in range(1, J):
            if not 0 <= self.parents[j] < j:
                raise MotionError(f"joint {j} parent {self.parents[j]} violates topological order")
        for g, idx in self.groups.items():
            if any(not 0 <= i < J for i in idx):
                raise MotionError(f"group {g!r} references invalid joints")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def frame_dim(self) -> int:
        return self.n_joints * 6 + 3 + N_CONTACTS

    @property
    def rot_dim(self) -> int:
        return self.n_joints * 6

    def group(self, name: str) -> list[int]:
        if name not in self.groups:
            raise MotionError(f"skeleton {self.name!r} has no joint group {name!r}")
        return list(self.groups[name])

    def contact_joints(self) -> list[int]:
        heels, toes = self.group("heels"), self.group("toes")
        return [heels[0], heels[1], toes[0], toes[1]]

    def has_children(self) -> np.ndarray:
        out = np.zeros(self.n_joints, dtype=bool)
        out[self.parents[1:]] = True
        return out

    def rest_positions(self) -> np.ndarray:
        pos = np.zeros((self.n_joints, 3))
        for j in range(1, self.n_joints):
            pos[j] = pos[self.parents[j]] + self.offsets[j]
        return pos

    @classmethod
    def from_dict(cls, doc: dict) -> "Skeleton":
        joints = doc["joints"]
        return cls(names=[j["name"] for j in joints],
                   parents=[j["parent"] for j in joints],
                   offsets=[j["offset"] for j in joints],
                   groups={k: list(v) for k, v in doc.get("groups", {}).items()},
                   root_height=float(doc.get("root_height", 0.0)),
                   name=doc.get("name", "custom"))

    def to_dict(self) -> dict:
        return {"name": self.name, "root_height": self.root_height,
                "joints": [{"name": n, "parent": int(p), "offset": [float(x) for x in o]}
                           for n, p, o in zip(self.names, self.parents, self.offsets)],
                "groups": self.groups}


def load_skeleton(path_or_preset: str | os.PathLike = "smpl52") -> Skeleton:
    """Load a skeleton JSON file, or a bundled preset by name (``smpl52``, ``smpl24``)."""
    key = str(path_or_preset)
    if key in ("smpl52", "smpl24"):
        text = resources.files("gcdance.data").joinpath(f"skeleton_{key}.json").read_text()
        return Skeleton.from_dict(json.loads(text))
    return Skeleton.from_dict(json.loads(Path(key).read_text()))


# ---------------------------------------------------------------- rotations

def axis_angle_to_matrix(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula; (..., 3) -> (..., 3, 3)."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    safe = np.where(theta > 1e-12, theta, 1.0)
    k = aa / safe
    K = np.zeros(aa.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -k[..., 2], k[..., 1]
    K[..., 1, 0], K[..., 1, 2] = k[..., 2], -k[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -k[..., 1], k[..., 0]
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + s * K + (1 - c) * (K @ K)
    return np.where((theta > 1e-12)[..., None], R, eye)


def rot6d_to_matrix(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the two stored columns; (..., 6) -> (..., 3, 3)."""
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise MotionError(f"rot6d needs a trailing dimension of 6, got {r6.shape}")
    a1, a2 = r6[..., :3], r6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 < 1e-8):
        raise MotionError("rot6d first column has near-zero norm")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 < 1e-8):
        raise MotionError("rot6d columns are colinear")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """First two columns of a rotation matrix; (..., 3, 3) -> (..., 6)."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise MotionError(f"expected (..., 3, 3) rotation, got {R.shape}")
    err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max() if R.size else 0.0
    if err > tol or np.any(np.linalg.det(R) <= 0):
        raise MotionError("input is not a rotation matrix")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_to_matrix_t(r6: ag.Tensor) -> ag.Tensor:
    """Differentiable Gram-Schmidt; (..., 6) tensor -> (..., 3, 3)."""
    a1, a2 = r6[..., 0:3], r6[..., 3:6]
    b1 = a1 / ag.sqrt(ag.square(a1).sum(axis=-1, keepdims=True))
    u2 = a2 - (b1 * a2).sum(axis=-1, keepdims=True) * b1
    b2 = u2 / ag.sqrt(ag.square(u2).sum(axis=-1, keepdims=True))
    b3 = ag.cross(b1, b2)
    return ag.stack([b1, b2, b3], axis=-1)


# ---------------------------------------------------------------- clips

@dataclass
class MotionClip:
    frames: np.ndarray
    fps: int = 30
    n_joints: int = 52

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.n_joints * 6 + 3 + N_CONTACTS:
            raise MotionError(f"clip shape {self.frames.shape} does not match {self.n_joints} joints")

    @property
    def k(self) -> int:
        return self.frames.shape[0]

    @property
    def rotations(self) -> np.ndarray:
        return self.frames[:, : self.n_joints * 6].reshape(self.k, self.n_joints, 6)

    @property
    def translation(self) -> np.ndarray:
        r = self.n_joints * 6
        return self.frames[:, r:r + 3]

    @property
    def contacts(self) -> np.ndarray:
        return self.frames[:, -N_CONTACTS:]

    @classmethod
    def from_parts(cls, rot6d: np.ndarray, translation: np.ndarray, contacts: np.ndarray,
                   fps: int = 30) -> "MotionClip":
        k, J = rot6d.shape[:2]
        frames = np.concatenate([rot6d.reshape(k, J * 6), translation, contacts], axis=1)
        return cls(frames, fps=fps, n_joints=J)


def split_frames(frames: np.ndarray, n_joints: int):
    """(..., D) -> rotations (..., J, 6), translation (..., 3), contacts (..., 4)."""
    r = n_joints * 6
    rot = frames[..., :r].reshape(frames.shape[:-1] + (n_joints, 6))
    return rot, frames[..., r:r + 3], frames[..., r + 3:]


def forward_kinematics(clip_or_frames, skel: Skeleton) -> np.ndarray:
    """World joint positions (..., k, J, 3) from a clip or a raw frame array."""
    frames = clip_or_frames.frames if isinstance(clip_or_frames, MotionClip) else np.asarray(clip_or_frames)
    if frames.shape[-1] != skel.frame_dim:
        raise MotionError(f"frame dim {frames.shape[-1]} does not match skeleton ({skel.frame_dim})")
    rot6, trans, _ = split_frames(frames, skel.n_joints)
    R = rot6d_to_matrix(rot6)
    J = skel.n_joints
    G = np.empty_like(R)
    P = np.empty(R.shape[:-2] + (3,))
    G[..., 0, :, :] = R[..., 0, :, :]
    P[..., 0, :] = trans
    for j in range(1, J):
        p = skel.parents[j]
        G[..., j, :, :] = G[..., p, :, :] @ R[..., j, :, :]
        P[..., j, :] = P[..., p, :] + G[..., p, :, :] @ skel.offsets[j]
    return P


def forward_kinematics_t(frames: ag.Tensor, skel: Skeleton) -> ag.Tensor:
    """Differentiable FK on (..., D) frame tensors -> (..., J, 3)."""
    J = skel.n_joints
    if frames.shape[-1] != skel.frame_dim:
        raise MotionError(f"frame dim {frames.shape[-1]} does not match skeleton ({skel.frame_dim})")
    lead = frames.shape[:-1]
    rot6 = frames[..., : J * 6].reshape(lead + (J, 6))
    trans = frames[..., J * 6: J * 6 + 3]
    R = rot6d_to_matrix_t(rot6)
    needs_global = skel.has_children()
    G: list = [None] * J
    P: list = [None] * J
    G[0] = R[..., 0, :, :]
    P[0] = trans
    for j in range(1, J):
        p = skel.parents[j]
        P[j] = P[p] + ag.matmul(G[p], skel.offsets[j])
        if needs_global[j]:
            G[j] = ag.matmul(G[p], R[..., j, :, :])
    return ag.stack(P, axis=-2)


def detect_foot_contacts(positions: np.ndarray, skel: Skeleton,
                         v_thresh: float = V_THRESH, h_thresh: float = H_THRESH) -> np.ndarray:
    """(k, J, 3) positions -> (k, 4) flags; 1 iff speed < v_thresh and height < h_thresh."""
    positions = np.asarray(positions, dtype=np.float64)
    k = positions.shape[0]
    if k < 2:
        raise MotionError("contact detection needs at least 2 frames")
    markers = positions[:, skel.contact_joints(), :]
    speed = np.linalg.norm(markers[1:] - markers[:-1], axis=-1)
    speed = np.concatenate([speed, speed[-1:]], axis=0)
    height = markers[..., 2]
    return ((speed < v_thresh) & (height < h_thresh)).astype(np.float64)


# ---------------------------------------------------------------- normalization

@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, frames: np.ndarray) -> "NormStats":
        """Per-channel stats over (..., D); contact channels are left untouched."""
        flat = np.asarray(frames, dtype=np.float64).reshape(-1, frames.shape[-1])
        mean = flat.mean(axis=0)
        std = np.maximum(flat.std(axis=0), STD_FLOOR)
        mean[-N_CONTACTS:] = 0.0
        std[-N_CONTACTS:] = 1.0
        return cls(mean, std)


def normalize(frames, stats: NormStats | None):
    if stats is None:
        raise MotionError("normalization stats are missing")
    if isinstance(frames, MotionClip):
        return MotionClip((frames.frames - stats.mean) / stats.std, frames.fps, frames.n_joints)
    return (np.asarray(frames) - stats.mean) / stats.std


def denormalize(frames, stats: NormStats | None):
    if stats is None:
        raise MotionError("normalization stats are missing")
    if isinstance(frames, MotionClip):
        return MotionClip(frames.frames * stats.std + stats.mean, frames.fps, frames.n_joints)
    return np.asarray(frames) * stats.std + stats.mean


# ---------------------------------------------------------------- GCMO files

_GCMO_HEADER = struct.Struct("<4sIIIII")


def encode_gcmo(clip: MotionClip) -> bytes:
    k, d = clip.frames.shape
    head = _GCMO_HEADER.pack(GCMO_MAGIC, GCMO_VERSION, int(clip.fps), clip.n_joints, k, d)
    return head + clip.frames.astype("<f4").tobytes(order="C")


def decode_gcmo(data: bytes) -> MotionClip:
    if len(data) < _GCMO_HEADER.size or data[:4] != GCMO_MAGIC:
        raise MotionError("not a GCMO file")
    magic, version, fps, J, k, d = _GCMO_HEADER.unpack_from(data)
    if version != GCMO_VERSION:
        raise MotionError(f"unsupported GCMO version {version}")
    if d != J * 6 + 3 + N_CONTACTS:
        raise MotionError(f"GCMO frame dim {d} inconsistent with {J} joints")
    body = data[_GCMO_HEADER.size:]
    if len(body) != k * d * 4:
        raise MotionError("GCMO payload size mismatch")
    frames = np.frombuffer(body, dtype="<f4").reshape(k, d).astype(np.float64)
    return MotionClip(frames, fps=fps, n_joints=J)


def save_gcmo(path, clip: MotionClip) -> None:
    atomic_write_bytes(path, encode_gcmo(clip))


def load_gcmo(path) -> MotionClip:
    return decode_gcmo(Path(path).read_bytes())
