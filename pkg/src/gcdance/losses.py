"""Training losses and per-task gradient extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .motion import MotionError, N_CONTACTS, Skeleton, forward_kinematics, forward_kinematics_t

TASKS = ("S", "J", "V", "F", "C")


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ag.ShapeError(op, a.shape, b.shape)


def loss_simple(m0, m_hat) -> Tensor:
    """Mean squared error over every entry (and batch)."""
    m0, m_hat = ag.as_tensor(m0), ag.as_tensor(m_hat)
    _check_same("loss_simple", m0, m_hat)
    return ag.square(m0 - m_hat).mean()


def _positions(frames, skel: Skeleton):
    if isinstance(frames, Tensor) and frames.requires_grad:
        return forward_kinematics_t(frames, skel)
    return ag.Tensor(forward_kinematics(ag.as_tensor(frames).value, skel))


def loss_joint(m, m_hat, skel: Skeleton, pos=None, pos_hat=None) -> Tensor:
    """(1/k) sum_j ||FK(m^j) - FK(m_hat^j)||^2, averaged over the batch."""
    m, m_hat = ag.as_tensor(m), ag.as_tensor(m_hat)
    _check_same("loss_joint", m, m_hat)
    if m.shape[-1] != skel.frame_dim:
        raise MotionError("clip does not match skeleton")
    pos = _positions(m, skel) if pos is None else pos
    pos_hat = _positions(m_hat, skel) if pos_hat is None else pos_hat
    sq = ag.square(pos_hat - pos).sum(axis=(-2, -1))
    return sq.mean()


def loss_velocity(m, m_hat) -> Tensor:
    """(1/(k-1)) sum_j ||(m^{j+1}-m^j) - (m_hat^{j+1}-m_hat^j)||^2."""
    m, m_hat = ag.as_tensor(m), ag.as_tensor(m_hat)
    _check_same("loss_velocity", m, m_hat)
    if m.shape[-2] < 2:
        raise MotionError("velocity loss needs at least 2 frames")
    dm = m[..., 1:, :] - m[..., :-1, :]
    dh = m_hat[..., 1:, :] - m_hat[..., :-1, :]
    return ag.square(dm - dh).sum(axis=-1).mean()


def loss_contact(m_hat, skel: Skeleton, pos_hat=None) -> Tensor:
    """Foot-marker displacement masked by the predicted contact flags."""
    m_hat = ag.as_tensor(m_hat)
    if m_hat.shape[-2] < 2:
        raise MotionError("contact loss needs at least 2 frames")
    if "heels" not in skel.groups or "toes" not in skel.groups:
        raise MotionError("skeleton lacks heel/toe groups")
    pos_hat = _positions(m_hat, skel) if pos_hat is None else pos_hat
    markers = skel.contact_joints()
    feet = pos_hat[..., markers, :]
    vel = feet[..., 1:, :, :] - feet[..., :-1, :, :]
    b = m_hat[..., :-1, -N_CONTACTS:]
    b = b.reshape(b.shape + (1,))
    return ag.square(vel * b).sum(axis=(-2, -1)).mean()


@dataclass
class TaskGradients:
    G: np.ndarray
    losses: np.ndarray
    names: tuple = TASKS


def task_losses(model, batch) -> dict[str, Tensor]:
    """Forward pass of every objective on one batch (one shared graph)."""
    m_hat = model.predict(batch.d_t, batch.t, batch.music, batch.genres)
    raw_hat = m_hat * model.stats.std + model.stats.mean
    pos_hat = forward_kinematics_t(raw_hat, model.skel)
    pos = ag.Tensor(batch.positions)
    probs = model.classifier.forward(batch.texts)
    return {
        "S": loss_simple(batch.m0, m_hat),
        "J": loss_joint(batch.raw, raw_hat, model.skel, pos=pos, pos_hat=pos_hat),
        "V": loss_velocity(batch.m0, m_hat),
        "F": loss_contact(raw_hat, model.skel, pos_hat=pos_hat),
        "C": model.classifier_loss(probs, batch.text_genres),
    }


def per_task_gradients(model, batch, losses: dict | None = None) -> TaskGradients:
    """Columns (S, J, V, F, C) from separate backward passes over one forward graph."""
    losses = task_losses(model, batch) if losses is None else losses
    cols, vals = [], []
    for name in TASKS:
        try:
            g = model.store.flat_grad(losses[name])
        except ag.GradientError as exc:
            raise ag.GradientError(exc.node, f"non-finite gradient in loss {name}") from exc
        cols.append(g)
        vals.append(float(losses[name].value))
    return TaskGradients(np.stack(cols, axis=1), np.array(vals))
