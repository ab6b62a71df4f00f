"""Self-supervised dictionary learning from reconstruction residuals."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lca import LcaParams
from .network import NetworkConfig, Pathway, infer
from .tensor import DictionaryLayer, GeometryError, _pad_spatial, _windows, analyze, synthesize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    infer_timesteps: int = 400
    batch_size: int = 1
    epochs: int = 1
    timestep_budget: int | None = None
    seed: int = 0

    def __post_init__(self):
        # 0 is accepted and means inference-only passes (dictionaries untouched)
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.infer_timesteps < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("infer_timesteps, batch_size and epochs must be positive")


def dict_gradient(residual, a, d: DictionaryLayer) -> np.ndarray:
    """Hebbian kernel update direction ``-d(0.5 ||r||^2)/dW`` for ``r = x - synthesize(a, d)``.

    For each feature this is the correlation of the residual with the
    feature's activation map over its strided placements; batch axes are
    summed. Returned with the shape of ``d.weights``.
    """
    residual = np.asarray(residual)
    a = np.asarray(a)
    h, w = residual.shape[-3:-1]
    if residual.shape[-1] != d.in_channels:
        raise GeometryError(f"residual has {residual.shape[-1]} channels, layer expects {d.in_channels}")
    g = d.geometry(h, w)
    expected = residual.shape[:-3] + (g.output_h, g.output_w, d.num_features)
    if h % d.stride or w % d.stride or a.shape != expected:
        raise GeometryError(f"activation shape {a.shape} does not match residual geometry {expected}")
    win = _windows(_pad_spatial(residual, g.pad_h, g.pad_w), g)  # (..., Ho, Wo, C, kh, kw)
    nlead = a.ndim - 1
    grad = np.tensordot(a, win, axes=(list(range(nlead)), list(range(nlead))))  # (F, C, kh, kw)
    return grad.transpose(0, 2, 3, 1).astype(d.weights.dtype, copy=False)


def pathway_gradients(residual, acts: Sequence[np.ndarray], pathway: Pathway) -> list[np.ndarray]:
    """Kernel gradients for every layer of a pathway under the joint multiscale reconstruction.

    Layer ``l`` sees the residual projected into its input space and the
    total code at its level (its own activations plus everything synthesized
    down from the layers above it).
    """
    K = len(pathway.layers)
    codes = [None] * K
    codes[-1] = acts[-1]
    for k in range(K - 1, 0, -1):
        codes[k - 1] = acts[k - 1] + synthesize(codes[k], pathway.layers[k])
    grads = []
    r = residual
    for k, d in enumerate(pathway.layers):
        grads.append(dict_gradient(r, codes[k], d))
        if k + 1 < K:
            r = analyze(r, d)
    return grads


def apply_update(d: DictionaryLayer, grad, lr: float, rng=None) -> DictionaryLayer:
    """Step the kernels along ``grad`` and renormalize each to unit L2 norm.

    A kernel that collapses to zero is replaced by a fresh random unit
    kernel.
    """
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    w = (d.weights.astype(np.float64) + lr * np.asarray(grad, dtype=np.float64))
    flat = w.reshape(d.num_features, -1)
    norms = np.sqrt(np.sum(flat * flat, axis=1))
    dead = ~(norms > 1e-12)
    if np.any(dead):
        rng = np.random.default_rng(rng)
        log.warning("resampling %d zero-norm kernel(s)", int(dead.sum()))
        flat[dead] = rng.standard_normal((int(dead.sum()), flat.shape[1]))
        norms = np.sqrt(np.sum(flat * flat, axis=1))
    flat /= norms[:, None]
    return DictionaryLayer(flat.reshape(d.weights.shape).astype(d.weights.dtype), d.stride)


@dataclass
class EpochStats:
    epoch: int
    images: int
    recon_mse: float
    percent_active: float


def train_pathway(images, pathway: Pathway, train: TrainConfig, lca: LcaParams | None = None,
                  lambdas: Sequence[float] | None = None, taus: Sequence[float] | None = None,
                  image_shape=None):
    """Pre-train one pathway on its own (no competition from other pathways).

    ``images`` is an array ``(N, H, W, C)`` or a sequence of such images.
    Each minibatch is inferred from rest for ``train.infer_timesteps``
    steps; every layer is then updated once from the end-of-inference
    residual and activations. Returns the trained pathway and one
    :class:`EpochStats` per epoch (error measured before each update).
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.shape[0] == 0:
        raise ValueError("empty dataset")
    image_shape = tuple(image_shape or images.shape[1:])
    lca = lca or LcaParams()
    pathway = pathway.copy()
    rng = np.random.default_rng(train.seed)
    n = images.shape[0]
    history = []
    shown = 0
    for epoch in range(1, train.epochs + 1):
        order = rng.permutation(n)
        err_sum, pct_sum, count = 0.0, 0.0, 0
        for start in range(0, n, train.batch_size):
            if train.timestep_budget is not None and shown * train.infer_timesteps >= train.timestep_budget:
                break
            batch = images[order[start:start + train.batch_size]]
            config = NetworkConfig([pathway], image_shape, lca, lambdas, taus)
            state, _ = infer(batch, config, trace_every=None, timesteps=train.infer_timesteps)
            acts = [s.a for s in state.states[0]]
            mse = np.mean(np.square(state.residual, dtype=np.float64), axis=(1, 2, 3))
            pct = np.mean([np.count_nonzero(a, axis=(1, 2, 3)) / np.prod(a.shape[1:]) for a in acts], axis=0)
            err_sum += float(mse.sum())
            pct_sum += float(np.sum(pct))
            count += len(batch)
            shown += len(batch)
            if train.learning_rate == 0:
                continue
            grads = pathway_gradients(state.residual, acts, pathway)
            lr = train.learning_rate / len(batch)
            pathway = Pathway(pathway.name, [
                apply_update(d, g, lr, rng) for d, g in zip(pathway.layers, grads)
            ])
        if count == 0:
            break
        stats = EpochStats(epoch, count, err_sum / count, pct_sum / count)
        log.info("%s epoch %d: mse=%.6g active=%.4f", pathway.name, epoch, stats.recon_mse, stats.percent_active)
        history.append(stats)
    return pathway, history
