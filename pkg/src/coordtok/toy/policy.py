"""Linear-softmax sequence policy over the toy vocabulary."""
from __future__ import annotations

import hashlib

import numpy as np

from . import _kernels as K
from .world import VOCAB_SIZE, Scene

N_FEATURES = K.N_FEATURES


class LinearPolicy:
    """``logits = theta @ phi(scene, prefix)`` with ``theta`` of shape ``(|V|, d)``.

    The weights live in ``w = theta.T`` so that the sparse kernels stream over
    the vocabulary; ``theta`` is a view onto the same memory.
    """

    def __init__(self, w=None):
        if w is None:
            w = np.zeros((N_FEATURES, VOCAB_SIZE))
        w = np.ascontiguousarray(w, dtype=np.float64)
        if w.shape != (N_FEATURES, VOCAB_SIZE):
            raise ValueError(f"weights must be {(N_FEATURES, VOCAB_SIZE)}, got {w.shape}")
        self.w = w

    @property
    def theta(self) -> np.ndarray:
        return self.w.T

    def copy(self) -> "LinearPolicy":
        return LinearPolicy(self.w.copy())

    def checksum(self) -> str:
        return hashlib.sha256(self.w.tobytes()).hexdigest()

    # single-position helpers, used by tests and small tools

    def features(self, scene: Scene, prefix) -> np.ndarray:
        """Dense feature vector after reading ``prefix``."""
        st = K.new_tracker()
        for t in prefix:
            K._push_py(st, int(t))
        idx = np.zeros(K.MAX_ACTIVE, dtype=np.int64)
        val = np.zeros(K.MAX_ACTIVE)
        K._featurize_py(st, scene.obs_count, scene.obs_box, idx, val)
        phi = np.zeros(N_FEATURES)
        np.add.at(phi, idx, val)
        return phi

    def logits(self, scene: Scene, prefix) -> np.ndarray:
        return self.theta @ self.features(scene, prefix)

    def log_probs(self, scene: Scene, prefix) -> np.ndarray:
        z = self.logits(scene, prefix)
        z = z - z.max()
        return z - np.log(np.exp(z).sum())

    def log_prob(self, scene: Scene, prefix, token: int) -> float:
        return float(self.log_probs(scene, prefix)[token])

    def grad_log_prob(self, scene: Scene, prefix, token: int) -> np.ndarray:
        """``d log pi(token | prefix) / d theta = (onehot(token) - softmax) outer phi``."""
        phi = self.features(scene, prefix)
        g = -np.exp(self.log_probs(scene, prefix))
        g[token] += 1.0
        return np.outer(g, phi)

    def sequence_log_prob(self, scene: Scene, tokens) -> float:
        return sum(self.log_prob(scene, tokens[:k], tokens[k]) for k in range(len(tokens)))


class Adam:
    """Adam on a maximization-agnostic gradient: ``step`` subtracts ``lr * m / sqrt(v)``."""

    def __init__(self, shape, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray):
        self.t += 1
        self.m *= self.b1
        self.m += (1 - self.b1) * grad
        self.v *= self.b2
        self.v += (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
