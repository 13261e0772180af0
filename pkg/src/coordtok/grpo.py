"""Group-relative advantages and the clipped, KL-regularized surrogate objective.

Nothing here knows about a particular policy: callers hand over per-token
log-probabilities and receive the objective together with its gradient with
respect to the new-policy log-probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class GroupTooSmall(ValueError):
    pass


class InvalidLogProbs(ValueError):
    pass


@dataclass(frozen=True)
class GrpoConfig:
    clip_epsilon: float = 0.2
    kl_coefficient: float = 0.01
    std_floor: float = 1e-8

    def __post_init__(self):
        if not 0 < self.clip_epsilon < 1:
            raise ValueError(f"clip_epsilon must lie in (0, 1), got {self.clip_epsilon}")
        if self.kl_coefficient < 0:
            raise ValueError("kl_coefficient must be >= 0")
        if self.std_floor <= 0:
            raise ValueError("std_floor must be > 0")


@dataclass
class RolloutGroup:
    """G sampled outputs for one prompt, with per-token log-probs under three policies.

    ``kl`` optionally carries an exact per-position KL(new || ref).  Its
    gradient then depends on full distributions, so the caller adds it; when
    ``kl`` is absent the term is estimated from the sampled token's log-probs
    and its gradient is folded into the returned weights.
    """
    rewards: Sequence[float]
    logp_new: Sequence[np.ndarray]
    logp_old: Sequence[np.ndarray]
    logp_ref: Sequence[np.ndarray]
    kl: Optional[Sequence[np.ndarray]] = None

    def __post_init__(self):
        G = len(self.rewards)
        if G < 2:
            raise GroupTooSmall(f"group size must be >= 2, got {G}")
        for name in ("logp_new", "logp_old", "logp_ref"):
            if len(getattr(self, name)) != G:
                raise InvalidLogProbs(f"{name} has {len(getattr(self, name))} rollouts, expected {G}")
        self.logp_new = [np.asarray(x, dtype=np.float64) for x in self.logp_new]
        self.logp_old = [np.asarray(x, dtype=np.float64) for x in self.logp_old]
        self.logp_ref = [np.asarray(x, dtype=np.float64) for x in self.logp_ref]
        for i in range(G):
            L = self.logp_new[i].shape
            if self.logp_old[i].shape != L or self.logp_ref[i].shape != L:
                raise InvalidLogProbs(f"rollout {i}: log-prob lengths disagree")
            if L[0] == 0:
                raise InvalidLogProbs(f"rollout {i} is empty")

    @property
    def G(self) -> int:
        return len(self.rewards)


def advantages(rewards, std_floor: float = 1e-8) -> np.ndarray:
    """``(r - mean) / max(std, floor)`` with population std; equal rewards give zeros."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmall(f"group size must be >= 2, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    c = r - r.mean()
    return c / max(float(np.sqrt(np.mean(c * c))), std_floor)


def k3_kl(logp_new, logp_ref):
    """Per-token KL estimate ``exp(d) - d - 1`` with ``d = logp_ref - logp_new``, and its
    derivative with respect to ``logp_new``."""
    d = np.asarray(logp_ref) - np.asarray(logp_new)
    e = np.exp(d)
    return e - d - 1.0, 1.0 - e


def clipped_objective(group: RolloutGroup, cfg: GrpoConfig):
    """Return ``(J, weights)`` where ``weights[i][t] = dJ / d logp_new[i][t]``.

    With exact KL values on the group the weights cover the surrogate only.
    """
    A = advantages(group.rewards, cfg.std_floor)
    G = group.G
    eps = cfg.clip_epsilon
    beta = cfg.kl_coefficient
    J = 0.0
    weights = []
    for i in range(G):
        new, old, ref = group.logp_new[i], group.logp_old[i], group.logp_ref[i]
        if not (np.all(np.isfinite(new)) and np.all(np.isfinite(old)) and np.all(np.isfinite(ref))):
            raise InvalidLogProbs(f"rollout {i} has non-finite log-probs")
        L = new.shape[0]
        rho = np.exp(new - old)
        a = A[i]
        unclipped = rho * a
        clipped = np.clip(rho, 1 - eps, 1 + eps) * a
        surr = np.minimum(unclipped, clipped)
        # the clipped branch is only the strict minimum when rho is outside
        # the clip range, where it is flat
        g = np.where(unclipped <= clipped, rho * a, 0.0)
        if group.kl is not None:
            kl = np.asarray(group.kl[i], dtype=np.float64)
            kl_g = np.zeros(L)
        else:
            kl, kl_g = k3_kl(new, ref)
        J += float(np.sum(surr - beta * kl)) / L
        weights.append((g - beta * kl_g) / (G * L))
    return J / G, weights


def kl_per_position(p_new, p_ref) -> float:
    """Exact categorical KL(new || ref); zero-probability entries of ``p_new`` add nothing."""
    p = np.asarray(p_new, dtype=np.float64)
    q = np.asarray(p_ref, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("probabilities must be non-negative")
    if abs(p.sum() - 1) > 1e-9 or abs(q.sum() - 1) > 1e-9:
        raise ValueError("distributions must be normalized")
    nz = p > 0
    if np.any(q[nz] == 0):
        return float("inf")
    return max(float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz])))), 0.0)


def kl_from_logits(logits_new, logits_ref):
    """Exact KL(new || ref) between softmax rows and its gradient w.r.t. ``logits_new``.

    Works row-wise on ``(..., V)`` arrays.
    """
    ln = logits_new - logits_new.max(axis=-1, keepdims=True)
    lr = logits_ref - logits_ref.max(axis=-1, keepdims=True)
    logp = ln - np.log(np.exp(ln).sum(axis=-1, keepdims=True))
    logq = lr - np.log(np.exp(lr).sum(axis=-1, keepdims=True))
    p = np.exp(logp)
    diff = logp - logq
    kl = np.sum(p * diff, axis=-1)
    grad = p * (diff - kl[..., None])
    return kl, grad
