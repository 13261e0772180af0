"""Teacher-forced SFT, sampling and GRPO updates for :class:`LinearPolicy`."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..diagnostics import labeled_boxes
from ..grpo import GrpoConfig, RolloutGroup, clipped_objective
from ..rewards import box_iou_reward
from ..seqfmt import PayloadKind, parse
from . import _kernels as K
from .policy import Adam, LinearPolicy
from .world import EXTENT, Scene, ToyVocab

DEFAULT_MAX_LEN = 200


@dataclass(frozen=True)
class Decoding:
    """``temperature <= 0`` means greedy; ``top_k = 0`` and ``top_p = 1`` disable filtering."""
    temperature: float = 0.0
    top_k: int = 0
    top_p: float = 1.0

    def __post_init__(self):
        if self.top_k < 0 or not 0 < self.top_p <= 1:
            raise ValueError("top_k must be >= 0 and top_p in (0, 1]")

    @property
    def greedy(self) -> bool:
        return self.temperature <= 0 or self.top_k == 1


GREEDY = Decoding()


def _pack(batch):
    scenes = [s for s, _ in batch]
    seqs = [np.asarray(t, dtype=np.int64) for _, t in batch]
    offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(t) for t in seqs])
    tokens = np.concatenate(seqs)
    obs_count = np.stack([s.obs_count for s in scenes]).astype(np.int64)
    obs_box = np.stack([s.obs_box for s in scenes]).astype(np.int64)
    return tokens, offsets, obs_count, obs_box


def sft_loss_and_grad(policy: LinearPolicy, batch):
    """Mean token cross-entropy under teacher forcing, and its gradient w.r.t. ``theta``."""
    loss, gw = _sft_grad_w(policy, batch)
    return loss, gw.T


def _sft_grad_w(policy, batch):
    tokens, offsets, obs_count, obs_box = _pack(batch)
    idx, val = K.tf_features(tokens, offsets, obs_count, obs_box)
    loss, gw = K.sft_grad(policy.w, idx, val, tokens)
    return float(loss), gw


def sft_step(policy: LinearPolicy, batch, lr: float, opt: Optional[Adam] = None):
    """One update on ``batch`` of ``(scene, gt_ids)`` pairs; returns ``(policy, loss)``.

    Plain gradient descent unless an optimizer is supplied (its own rate is used).
    The loss is the one measured before the update.
    """
    loss, gw = _sft_grad_w(policy, batch)
    if opt is None:
        policy.w -= lr * gw
    else:
        opt.step(policy.w, gw)
    return policy, loss


def _decode(policy, scene, decoding, max_len, rng):
    if max_len <= 0:
        raise ValueError("max_len must be > 0")
    if decoding.greedy:
        u = np.zeros(max_len)
        temp = 0.0
    else:
        if rng is None:
            raise ValueError("sampling needs an rng")
        u = rng.random(max_len)
        temp = float(decoding.temperature)
    return K.decode(policy.w, scene.obs_count, scene.obs_box, max_len, temp,
                    int(decoding.top_k), float(decoding.top_p), u)


def sample_sequence(policy: LinearPolicy, scene: Scene, decoding: Decoding = GREEDY,
                    max_len: int = DEFAULT_MAX_LEN, rng=None) -> np.ndarray:
    """Autoregressive decode; nothing but ``max_len`` constrains the output."""
    return _decode(policy, scene, decoding, max_len, rng)[0]


def sequence_reward(ids, scene: Scene) -> float:
    """Exclusive box-IoU reward of a decoded id sequence against the scene."""
    records, _ = parse(ToyVocab.surface(ids), PayloadKind.BOX)
    preds = labeled_boxes(records, EXTENT)
    return box_iou_reward(preds, scene.gt_boxes(), mode="exclusive").reward


@dataclass
class GrpoStepStats:
    mean_reward: float
    mean_kl: float
    objective: float
    degenerate_groups: int


def grpo_step(policy: LinearPolicy, ref_policy: LinearPolicy, scenes: Sequence[Scene],
              cfg: GrpoConfig, G: int, rng, lr: float = 0.01, opt: Optional[Adam] = None,
              decoding: Decoding = Decoding(temperature=1.0),
              max_len: int = DEFAULT_MAX_LEN):
    """Sample ``G`` rollouts per scene, score them and ascend the clipped objective.

    Old-policy log-probs equal the current ones (one inner epoch), so the
    ratio is 1 at the update point.  The KL term is the exact per-position
    divergence from ``ref_policy``.  Returns ``(policy, stats)``.
    """
    grad = np.zeros_like(policy.w)
    rewards, kls, objs = [], [], []
    degenerate = 0
    for scene in scenes:
        outs = [_decode(policy, scene, decoding, max_len, rng) for _ in range(G)]
        r = np.array([sequence_reward(ids, scene) for ids, _, _ in outs])
        logp, logq, kl = zip(*(K.token_stats(policy.w, ref_policy.w, idx, val, ids)
                               for ids, idx, val in outs))
        group = RolloutGroup(r, logp, logp, logq, kl=kl)
        J, weights = clipped_objective(group, cfg)
        if np.all(r == r[0]):
            degenerate += 1
        for (ids, idx, val), wt in zip(outs, weights):
            c = np.full(ids.shape[0], cfg.kl_coefficient / (G * ids.shape[0]))
            if cfg.kl_coefficient == 0 and not np.any(wt):
                continue
            K.pg_accumulate(policy.w, ref_policy.w, idx, val, ids, wt, c, grad)
        rewards.append(r.mean())
        kls.append(np.mean([k.mean() for k in kl]))
        objs.append(J)
    grad /= len(scenes)
    # ascend: the optimizers subtract
    if opt is None:
        policy.w += lr * grad
    else:
        opt.step(policy.w, -grad)
    return policy, GrpoStepStats(float(np.mean(rewards)), float(np.mean(kls)),
                                 float(np.mean(objs)), degenerate)


def _fixed_group(policy, ref_policy, scene, rollouts, rewards, old_policy):
    old = old_policy or policy
    feats, logp, logq, kl, logo = [], [], [], [], []
    for ids in rollouts:
        ids = np.asarray(ids, dtype=np.int64)
        off = np.array([0, ids.shape[0]])
        idx, val = K.tf_features(ids, off, scene.obs_count[None], scene.obs_box[None])
        a, b, k = K.token_stats(policy.w, ref_policy.w, idx, val, ids)
        feats.append((ids, idx, val))
        logp.append(a)
        logq.append(b)
        kl.append(k)
        logo.append(K.token_stats(old.w, ref_policy.w, idx, val, ids)[0])
    return feats, RolloutGroup(rewards, logp, logo, logq, kl=kl)


def grpo_objective(policy: LinearPolicy, ref_policy: LinearPolicy, scene: Scene,
                   rollouts, rewards, cfg: GrpoConfig, old_policy: Optional[LinearPolicy] = None):
    """Objective of fixed rollouts under ``policy`` (old policy defaults to ``policy``)."""
    _, group = _fixed_group(policy, ref_policy, scene, rollouts, rewards, old_policy)
    return clipped_objective(group, cfg)[0]


def grpo_gradient(policy: LinearPolicy, ref_policy: LinearPolicy, scene: Scene,
                  rollouts, rewards, cfg: GrpoConfig, old_policy: Optional[LinearPolicy] = None):
    """Analytic ``dJ/dtheta`` of :func:`grpo_objective`, with ``old_policy`` held fixed."""
    feats, group = _fixed_group(policy, ref_policy, scene, rollouts, rewards, old_policy)
    _, weights = clipped_objective(group, cfg)
    grad = np.zeros_like(policy.w)
    G = len(rollouts)
    for (ids, idx, val), wt in zip(feats, weights):
        c = np.full(ids.shape[0], cfg.kl_coefficient / (G * ids.shape[0]))
        K.pg_accumulate(policy.w, ref_policy.w, idx, val, ids, wt, c, grad)
    return grad.T
