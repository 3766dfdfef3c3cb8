"""Progressive confidence network.

A shared MLP trunk with one input projection per stage. Stage ``i`` sees the
pooled image features concatenated with ``i - 1`` pooled token-block
embeddings and predicts how similar the onboard and ground answers will be.
The network follows the scikit-learn estimator protocol: hyperparameters live
in ``__init__`` and learned state in trailing-underscore attributes.
"""
from __future__ import annotations

import copy
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._seeding import rng_for

MAGIC = b"PCN1"
_HEADER = struct.Struct("<6I")


@dataclass(frozen=True)
class StageInput:
    image_features: np.ndarray
    token_blocks: Tuple[np.ndarray, ...] = ()

    @property
    def stage(self) -> int:
        return len(self.token_blocks) + 1

    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.image_features, dtype=float),
                               *[np.asarray(b, dtype=float) for b in self.token_blocks]])


@dataclass(frozen=True)
class ConfidenceDecision:
    kind: str  # "offload" | "continue" | "accept"
    stage: int

    @property
    def offload(self) -> bool:
        return self.kind == "offload"


class ProgressiveConfidenceNet(BaseEstimator, RegressorMixin):
    """Multi-stage similarity regressor sharing one trunk across stages.

    Parameters
    ----------
    image_dim : int
        Length of the pooled image feature vector.
    token_embed_dim : int
        Length of one pooled token-block embedding.
    n_stages : int
        Number of confidence stages.
    hidden_width, n_hidden : int
        Trunk width and number of tanh hidden layers (the stage projection
        feeds the first one).
    thresholds : sequence of float
        Per-stage offload thresholds.
    token_block : int
        Tokens generated onboard between consecutive stages.
    """

    def __init__(self, image_dim=64, token_embed_dim=16, n_stages=2, hidden_width=64,
                 n_hidden=2, thresholds=(0.5, 0.4), token_block=8, learning_rate=1e-3,
                 momentum=0.9, batch_size=32, epochs=200, seed=0, zero_init_output=False):
        self.image_dim = image_dim
        self.token_embed_dim = token_embed_dim
        self.n_stages = n_stages
        self.hidden_width = hidden_width
        self.n_hidden = n_hidden
        self.thresholds = thresholds
        self.token_block = token_block
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.zero_init_output = zero_init_output

    # -- structure -----------------------------------------------------------

    def stage_input_dim(self, stage: int) -> int:
        return self.image_dim + (stage - 1) * self.token_embed_dim

    def _check_stage(self, stage):
        if not 1 <= stage <= self.n_stages:
            raise ValueError(f"stage {stage} outside 1..{self.n_stages}")

    def initialize(self):
        """Draw fresh parameters from the seed (Glorot-uniform weights, zero biases)."""
        if len(tuple(self.thresholds)) != self.n_stages:
            raise ValueError("need one threshold per stage")
        if self.n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")
        rng = rng_for(self.seed, "confidence-init")
        width = self.hidden_width

        def glorot(n_in, n_out):
            limit = np.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-limit, limit, size=(n_in, n_out))

        self.projections_ = [[glorot(self.stage_input_dim(i), width), np.zeros(width)]
                             for i in range(1, self.n_stages + 1)]
        self.trunk_ = [[glorot(width, width), np.zeros(width)] for _ in range(self.n_hidden - 1)]
        out_w = np.zeros((width, 1)) if self.zero_init_output else glorot(width, 1)
        self.trunk_.append([out_w, np.zeros(1)])
        self.loss_history_ = []
        return self

    def _param_list(self):
        return [p for layer in self.projections_ + self.trunk_ for p in layer]

    def get_flat_params(self) -> np.ndarray:
        check_is_fitted(self, "projections_")
        return np.concatenate([p.ravel() for p in self._param_list()])

    def set_flat_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        offset = 0
        for layer in self.projections_ + self.trunk_:
            for k, p in enumerate(layer):
                layer[k] = flat[offset:offset + p.size].reshape(p.shape).copy()
                offset += p.size
        if offset != flat.size:
            raise ValueError(f"expected {offset} parameters, got {flat.size}")
        return self

    # -- forward / backward --------------------------------------------------

    def _forward(self, stage, x):
        w, b = self.projections_[stage - 1]
        acts = [np.tanh(x @ w + b)]
        for w, b in self.trunk_[:-1]:
            acts.append(np.tanh(acts[-1] @ w + b))
        w, b = self.trunk_[-1]
        return (acts[-1] @ w + b)[:, 0], acts

    def _loss_grad(self, stage_inputs, y):
        """Summed-stage MSE and its gradient, aligned with ``_param_list``."""
        y = np.asarray(y, dtype=float)
        n = len(y)
        proj_grads = [[np.zeros_like(w), np.zeros_like(b)] for w, b in self.projections_]
        trunk_grads = [[np.zeros_like(w), np.zeros_like(b)] for w, b in self.trunk_]
        loss = 0.0
        for stage, x in enumerate(stage_inputs, start=1):
            out, acts = self._forward(stage, x)
            err = out - y
            loss += float(np.mean(err ** 2))
            delta = (2.0 / n) * err[:, None]
            w_out = self.trunk_[-1][0]
            trunk_grads[-1][0] += acts[-1].T @ delta
            trunk_grads[-1][1] += delta.sum(axis=0)
            back = (delta @ w_out.T) * (1.0 - acts[-1] ** 2)
            for k in range(len(self.trunk_) - 2, -1, -1):
                trunk_grads[k][0] += acts[k].T @ back
                trunk_grads[k][1] += back.sum(axis=0)
                back = (back @ self.trunk_[k][0].T) * (1.0 - acts[k] ** 2)
            proj_grads[stage - 1][0] += x.T @ back
            proj_grads[stage - 1][1] += back.sum(axis=0)
        grads = [g for layer in proj_grads + trunk_grads for g in layer]
        return loss, grads

    def loss(self, stage_inputs, y) -> float:
        return self._loss_grad(self._validate_inputs(stage_inputs, len(y)), y)[0]

    def _validate_inputs(self, stage_inputs, n=None):
        if len(stage_inputs) != self.n_stages:
            raise ValueError(f"expected inputs for {self.n_stages} stages, got {len(stage_inputs)}")
        out = []
        for stage, x in enumerate(stage_inputs, start=1):
            x = check_array(x, dtype=np.float64)
            if x.shape[1] != self.stage_input_dim(stage):
                raise ValueError(f"stage {stage} expects {self.stage_input_dim(stage)} "
                                 f"features, got {x.shape[1]}")
            if n is not None and x.shape[0] != n:
                raise ValueError("stage inputs and targets differ in length")
            out.append(x)
        return out

    # -- estimator API -------------------------------------------------------

    def fit(self, stage_inputs, y):
        """Initialize from the seed and train for ``epochs`` epochs."""
        self.initialize()
        return self.partial_fit(stage_inputs, y, epochs=self.epochs)

    def partial_fit(self, stage_inputs, y, epochs=1):
        """Continue mini-batch SGD with momentum from the current parameters."""
        y = np.asarray(y, dtype=float)
        if len(y) == 0:
            raise ValueError("cannot train on an empty dataset")
        if not hasattr(self, "projections_"):
            self.initialize()
        xs = self._validate_inputs(stage_inputs, len(y))
        params = self._param_list()
        velocity = [np.zeros_like(p) for p in params]
        rng = rng_for(self.seed, "confidence-shuffle", len(self.loss_history_))
        for _ in range(epochs):
            order = rng.permutation(len(y))
            for start in range(0, len(y), self.batch_size):
                idx = order[start:start + self.batch_size]
                _, grads = self._loss_grad([x[idx] for x in xs], y[idx])
                for p, v, g in zip(params, velocity, grads):
                    v *= self.momentum
                    v -= self.learning_rate * g
                    p += v
            self.loss_history_.append(self._loss_grad(xs, y)[0])
        return self

    def predict(self, X, stage=None):
        """Raw (unclamped) similarity estimates for a batch at ``stage``."""
        check_is_fitted(self, "projections_")
        stage = self.n_stages if stage is None else stage
        self._check_stage(stage)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.stage_input_dim(stage):
            raise ValueError(f"stage {stage} expects {self.stage_input_dim(stage)} "
                             f"features, got {X.shape[1]}")
        return self._forward(stage, X)[0]

    def estimate(self, stage: int, stage_input: StageInput) -> float:
        self._check_stage(stage)
        if stage_input.stage != stage:
            raise ValueError(f"stage {stage} needs {stage - 1} token blocks, "
                             f"got {len(stage_input.token_blocks)}")
        return float(self.predict(stage_input.vector()[None, :], stage)[0])

    def decide(self, stage: int, score: float) -> ConfidenceDecision:
        return decide(self.thresholds, stage, score)

    def score(self, stage_inputs, y, sample_weight=None):
        # R^2 of the final stage, as RegressorMixin expects
        from sklearn.metrics import r2_score
        return r2_score(y, self.predict(stage_inputs[-1]), sample_weight=sample_weight)

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(_HEADER.pack(self.n_stages, self.image_dim, self.token_embed_dim,
                                  self.hidden_width, self.n_hidden, self.token_block))
            fh.write(self.get_flat_params().astype("<f8").tobytes())

    @classmethod
    def load(cls, path, **params):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != MAGIC:
            raise ValueError(f"{path}: not a confidence network file")
        n_stages, image_dim, token_dim, width, n_hidden, block = _HEADER.unpack_from(blob, 4)
        params.setdefault("thresholds", (0.5, 0.4)[:n_stages] if n_stages <= 2
                          else tuple([0.5] * n_stages))
        net = cls(image_dim=image_dim, token_embed_dim=token_dim, n_stages=n_stages,
                  hidden_width=width, n_hidden=n_hidden, token_block=block, **params)
        net.initialize()
        net.set_flat_params(np.frombuffer(blob, dtype="<f8", offset=4 + _HEADER.size))
        return net


def decide(thresholds: Sequence[float], stage: int, score: float) -> ConfidenceDecision:
    """Offload when ``score`` is strictly below the stage threshold."""
    n = len(thresholds)
    if not 1 <= stage <= n:
        raise ValueError(f"stage {stage} outside 1..{n}")
    if score < thresholds[stage - 1]:
        return ConfidenceDecision("offload", stage)
    return ConfidenceDecision("accept" if stage == n else "continue", stage)


def train(net: ProgressiveConfidenceNet, stage_inputs, targets, epochs=None,
          learning_rate=None, seed=None):
    """Train a copy of ``net`` and return ``(trained_net, loss_history)``.

    An untrained ``net`` is initialized from its seed first; a trained one is
    warm-started.
    """
    if len(targets) == 0:
        raise ValueError("cannot train on an empty dataset")
    net = copy.deepcopy(net)
    if learning_rate is not None:
        net.learning_rate = learning_rate
    if seed is not None:
        net.seed = seed
    if not hasattr(net, "projections_"):
        net.initialize()
    before = len(net.loss_history_)
    net.partial_fit(stage_inputs, targets, epochs=net.epochs if epochs is None else epochs)
    return net, list(net.loss_history_[before:])


def similarity_target(sat_embedding, gs_embedding) -> float:
    """Cosine similarity between two answer embeddings."""
    a = np.asarray(sat_embedding, dtype=float)
    b = np.asarray(gs_embedding, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))
