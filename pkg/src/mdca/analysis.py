"""Readouts and experiment protocols on top of competitive inference."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .network import NetworkConfig, NetworkState, TraceRecord, compose_synthesize, infer

EPS = 1e-9
DEFAULT_THRESHOLD = 1.4

TRACE_COLUMNS = ("timestep", "pathway", "layer", "l1_activity", "percent_active",
                 "contribution_l2", "recon_mse")


@dataclass(frozen=True)
class RatioDecision:
    ratio: float
    threshold: float = DEFAULT_THRESHOLD

    @property
    def label(self) -> str:
        return "face" if self.ratio >= self.threshold else "non-face"


def _batched(images, batch_size):
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.shape[0] == 0:
        raise ValueError("empty image set")
    for start in range(0, images.shape[0], batch_size):
        yield images[start:start + batch_size]


def pathway_activity(state: NetworkState, pathway: int, layer: int = -1, norm: str = "l1"):
    """Magnitude of response of one layer (the top layer by default)."""
    a = np.asarray(state.states[pathway][layer].a, dtype=np.float64)
    axes = (-3, -2, -1)
    if norm == "l1":
        v = np.sum(np.abs(a), axis=axes)
    elif norm == "l2":
        v = np.sqrt(np.sum(a * a, axis=axes))
    else:
        raise ValueError(f"unknown norm {norm!r}")
    return float(v) if np.ndim(v) == 0 else v


def ratio(face_activity, object_activity):
    """``face / object`` elementwise, with the denominator floored at ``EPS``.

    The floor only matters for a (near) silent object pathway; elsewhere the
    ratio is exact, so e.g. 2.8 / 2.0 sits exactly on a 1.4 threshold.
    """
    r = np.asarray(face_activity, dtype=np.float64) / np.maximum(np.asarray(object_activity, dtype=np.float64), EPS)
    return float(r) if np.ndim(r) == 0 else r


def activity_ratio(state: NetworkState, face: int = 0, other: int = 1,
                   threshold: float = DEFAULT_THRESHOLD) -> RatioDecision:
    """Top-layer face/object activity ratio of a single-image state."""
    return RatioDecision(ratio(pathway_activity(state, face), pathway_activity(state, other)), threshold)


def fit_threshold(face_ratios: Sequence[float], nonface_ratios: Sequence[float]) -> float:
    """Maximum-likelihood decision threshold between two classes of ratios.

    A Gaussian is fitted to each class's log-ratio and the equal-likelihood
    point between the two means is returned (as a ratio). Degenerate
    variances fall back to the midpoint of the log means.
    """
    if len(face_ratios) == 0 or len(nonface_ratios) == 0:
        raise ValueError("both classes need at least one ratio")
    lf = np.log(np.maximum(np.asarray(face_ratios, dtype=np.float64), 1e-300))
    ln = np.log(np.maximum(np.asarray(nonface_ratios, dtype=np.float64), 1e-300))
    m1, v1 = lf.mean(), lf.var()
    m0, v0 = ln.mean(), ln.var()
    mid = 0.5 * (m0 + m1)
    if v0 < 1e-12 or v1 < 1e-12:
        return math.exp(mid)
    # log N(t; m1, v1) = log N(t; m0, v0)  ->  a t^2 + b t + c = 0
    a = 1 / v0 - 1 / v1
    b = 2 * (m1 / v1 - m0 / v0)
    c = m0 ** 2 / v0 - m1 ** 2 / v1 + math.log(v0 / v1)
    lo, hi = min(m0, m1), max(m0, m1)
    if abs(a) < 1e-12 * max(1 / v0, 1 / v1):
        roots = [-c / b] if b != 0 else []
    else:
        disc = b * b - 4 * a * c
        roots = [] if disc < 0 else [(-b + s * math.sqrt(disc)) / (2 * a) for s in (1, -1)]
    inside = [t for t in roots if lo <= t <= hi]
    if not inside:
        return math.exp(mid)
    return math.exp(min(inside, key=lambda t: abs(t - mid)))


def classification_accuracy(face_ratios, nonface_ratios, threshold: float) -> float:
    face = np.asarray(face_ratios) >= threshold
    nonface = np.asarray(nonface_ratios) < threshold
    return float((face.sum() + nonface.sum()) / (face.size + nonface.size))


def weighted_image_average(images, weights):
    """Per-feature weighted mean of ``images``; ``None`` where a feature's weights sum to zero.

    ``images`` is ``(N, H, W, C)`` and ``weights`` is ``(N, F)``.
    """
    images = np.asarray(images, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    totals = weights.sum(axis=0)
    sums = np.tensordot(weights, images, axes=([0], [0]))
    return [sums[f] / totals[f] if totals[f] > 0 else None for f in range(weights.shape[1])]


def activity_triggered_average(config: NetworkConfig, images, pathway: int, layer: int,
                               timesteps: int | None = None, batch_size: int = 100):
    """Activation-weighted mean input image for every feature of one layer.

    Each image is weighted by the feature's end-of-inference activation
    summed over space. Features that never fire map to ``None``.
    """
    weights, seen = [], []
    for batch in _batched(images, batch_size):
        state, _ = infer(batch, config, trace_every=None, timesteps=timesteps)
        weights.append(np.sum(state.states[pathway][layer].a, axis=(1, 2), dtype=np.float64))
        seen.append(batch)
    return weighted_image_average(np.concatenate(seen), np.concatenate(weights))


def mean_top_response(config: NetworkConfig, images, pathway: int,
                      timesteps: int | None = None, batch_size: int = 100) -> np.ndarray:
    """Spatial-mean activation of each top-layer feature, averaged over images."""
    total, count = None, 0
    for batch in _batched(images, batch_size):
        state, _ = infer(batch, config, trace_every=None, timesteps=timesteps)
        per_image = np.mean(state.states[pathway][-1].a, axis=(1, 2), dtype=np.float64)
        total = per_image.sum(axis=0) if total is None else total + per_image.sum(axis=0)
        count += len(batch)
    return total / count


def summed_layer_images(state: NetworkState, config: NetworkConfig) -> list[np.ndarray]:
    """Per-level image contributions summed across pathways (bottom level first)."""
    out = []
    for k in range(config.num_layers):
        parts = [compose_synthesize(state.states[m][k].a, pw, k) for m, pw in enumerate(config.pathways)]
        out.append(np.sum(parts, axis=0))
    return out


def layer_contribution_trace(traces: Sequence[TraceRecord], config: NetworkConfig):
    """One row per (timestep, pathway, layer) with its image-domain contribution norm."""
    if not traces:
        raise ValueError("empty trace")
    rows = []
    for rec in traces:
        for m, pw in enumerate(config.pathways):
            for k in range(config.num_layers):
                rows.append({"timestep": rec.timestep, "pathway": pw.name, "layer": k + 1,
                             "contribution_l2": float(rec.contribution_l2[m, k])})
    return rows


def half_rise_times(traces: Sequence[TraceRecord], pathway: int) -> np.ndarray:
    """First traced timestep at which each layer's contribution norm reaches half its final value.

    Shape ``(..., K)`` following the batch shape of the traces.
    """
    times = np.array([rec.timestep for rec in traces])
    c = np.stack([rec.contribution_l2[..., pathway, :] for rec in traces])  # (T, ..., K)
    reached = c >= 0.5 * c[-1]
    return times[np.argmax(reached, axis=0)]


def _fmt(v) -> str:
    return repr(float(v))


def write_trace_csv(path, traces: Sequence[TraceRecord], config: NetworkConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for rec in traces:
            for m, pw in enumerate(config.pathways):
                for k in range(config.num_layers):
                    w.writerow([rec.timestep, pw.name, k + 1, _fmt(rec.l1_activity[m, k]),
                                _fmt(rec.percent_active[m, k]), _fmt(rec.contribution_l2[m, k]),
                                _fmt(rec.recon_mse)])
