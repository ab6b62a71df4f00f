"""Multipath, multiscale competitive inference.

Every layer ``k`` of every pathway ``m`` reconstructs the image through the
product of the dictionaries beneath it::

    xhat = sum_m sum_k  D[m,1] D[m,2] ... D[m,k] a[m,k]

and all layers are driven by the same residual ``x - xhat``, projected up
through the transposed product. Layers of different pathways therefore
compete only through what is left of the input.

Layer indices are 0-based throughout (layer 0 touches the image).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lca import LayerState, LcaParams, threshold
from .tensor import DictionaryLayer, GeometryError, analyze, synthesize


@dataclass
class Pathway:
    name: str
    layers: list[DictionaryLayer]

    def __post_init__(self):
        if not self.layers:
            raise GeometryError(f"pathway {self.name!r} has no layers")
        for k in range(1, len(self.layers)):
            below, above = self.layers[k - 1], self.layers[k]
            if above.in_channels != below.num_features:
                raise GeometryError(
                    f"pathway {self.name!r}: layer {k} expects {above.in_channels} channels "
                    f"but layer {k - 1} has {below.num_features} features"
                )

    def copy(self) -> "Pathway":
        return Pathway(self.name, [d.copy() for d in self.layers])

    def signature(self):
        return [(d.num_features, d.kernel_h, d.kernel_w, d.in_channels, d.stride) for d in self.layers]


@dataclass
class NetworkConfig:
    pathways: list[Pathway]
    image_shape: tuple[int, int, int]
    lca: LcaParams = field(default_factory=LcaParams)
    lambdas: Sequence[float] | None = None
    taus: Sequence[float] | None = None

    def __post_init__(self):
        if not self.pathways:
            raise GeometryError("network needs at least one pathway")
        self.image_shape = tuple(int(v) for v in self.image_shape)
        ref = self.pathways[0].signature()
        for pw in self.pathways[1:]:
            if pw.signature() != ref:
                raise GeometryError(
                    f"pathway {pw.name!r} geometry differs from {self.pathways[0].name!r}"
                )
        if self.lambdas is not None:
            self.lambdas = tuple(float(v) for v in self.lambdas)
            if len(self.lambdas) != self.num_layers:
                raise ValueError(f"need {self.num_layers} per-layer lambdas, got {len(self.lambdas)}")
            if min(self.lambdas) < 0:
                raise ValueError("lambdas must be nonnegative")
        if self.taus is not None:
            self.taus = tuple(float(v) for v in self.taus)
            if len(self.taus) != self.num_layers:
                raise ValueError(f"need {self.num_layers} per-layer taus, got {len(self.taus)}")
            for tau in self.taus:
                if not tau > 0 or self.lca.dt / tau > 0.5:
                    raise ValueError(f"tau {tau:g} violates dt/tau <= 0.5 with dt={self.lca.dt:g}")
        # walk the shapes once so bad geometry fails here, not mid-inference
        h, w, c = self.image_shape
        if c != self.pathways[0].layers[0].in_channels:
            raise GeometryError(f"image has {c} channels, first layer expects "
                                f"{self.pathways[0].layers[0].in_channels}")
        self.layer_shapes()

    @property
    def num_layers(self) -> int:
        return len(self.pathways[0].layers)

    def lam(self, k: int) -> float:
        return self.lca.lam if self.lambdas is None else self.lambdas[k]

    def rate(self, k: int) -> float:
        return self.lca.rate if self.taus is None else self.lca.dt / self.taus[k]

    def layer_shapes(self) -> list[tuple[int, int, int]]:
        h, w, _ = self.image_shape
        shapes = []
        for d in self.pathways[0].layers:
            if h % d.stride or w % d.stride:
                raise GeometryError(f"{h}x{w} map not divisible by stride {d.stride}")
            h, w = h // d.stride, w // d.stride
            shapes.append((h, w, d.num_features))
        return shapes

    def pathway_index(self, name: str) -> int:
        for m, pw in enumerate(self.pathways):
            if pw.name == name:
                return m
        raise KeyError(f"no pathway named {name!r}")


@dataclass
class NetworkState:
    states: list[list[LayerState]]
    xhat: np.ndarray
    residual: np.ndarray
    t: int = 0

    def activations(self, m: int, k: int) -> np.ndarray:
        return self.states[m][k].a


@dataclass
class Stimulation:
    """Constant input current ``gain * bias`` injected into one layer.

    ``bias`` has one entry per feature and is broadcast over all spatial
    positions.
    """

    pathway: int
    layer: int
    bias: np.ndarray
    gain: float = 100.0

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=np.float64).ravel()
        if self.gain < 0:
            raise ValueError("gain must be nonnegative")


@dataclass
class TraceRecord:
    """Network metrics at one timestep.

    Array fields have shape ``(..., M, K)`` where ``...`` is the batch shape
    of the input (empty for a single image).
    """

    timestep: int
    l1_activity: np.ndarray
    percent_active: np.ndarray
    contribution_l2: np.ndarray
    recon_mse: float | np.ndarray


def compose_synthesize(a, pathway: Pathway, k: int) -> np.ndarray:
    """Image-domain contribution of activations at layer ``k``."""
    out = a
    for d in reversed(pathway.layers[: k + 1]):
        out = synthesize(out, d)
    return out


def compose_analyze(r, pathway: Pathway, k: int) -> np.ndarray:
    """Drive at layer ``k`` from image-domain ``r``; adjoint of :func:`compose_synthesize`."""
    out = r
    for d in pathway.layers[: k + 1]:
        out = analyze(out, d)
    return out


def _pathway_synthesis(acts: Sequence[np.ndarray], pathway: Pathway) -> np.ndarray:
    # nested form: D1 (a1 + D2 (a2 + D3 a3)), one synthesis per layer
    code = acts[-1]
    for k in range(len(acts) - 1, 0, -1):
        code = acts[k - 1] + synthesize(code, pathway.layers[k])
    return synthesize(code, pathway.layers[0])


def reconstruct(state: NetworkState | Sequence[Sequence[np.ndarray]], config: NetworkConfig):
    """Sum of every layer's image-domain contribution over every pathway."""
    if isinstance(state, NetworkState):
        acts = [[s.a for s in row] for row in state.states]
    else:
        acts = state
    total = None
    for pw, row in zip(config.pathways, acts):
        part = _pathway_synthesis(row, pw)
        total = part if total is None else total + part
    return total


def layer_contributions(state: NetworkState, config: NetworkConfig) -> list[list[np.ndarray]]:
    return [
        [compose_synthesize(s.a, pw, k) for k, s in enumerate(row)]
        for pw, row in zip(config.pathways, state.states)
    ]


def zero_state(x, config: NetworkConfig) -> NetworkState:
    x = np.asarray(x)
    if tuple(x.shape[-3:]) != config.image_shape:
        raise GeometryError(f"input shape {x.shape[-3:]} does not match network {config.image_shape}")
    lead = x.shape[:-3]
    dtype = np.result_type(x.dtype, config.pathways[0].layers[0].weights.dtype)
    shapes = config.layer_shapes()
    states = [[LayerState.zeros(lead + shp, dtype) for shp in shapes] for _ in config.pathways]
    xhat = np.zeros(x.shape, dtype=dtype)
    return NetworkState(states, xhat, (x - xhat).astype(dtype), 0)


def _check_stimulation(stim: Sequence[Stimulation], config: NetworkConfig):
    for s in stim:
        if not 0 <= s.pathway < len(config.pathways):
            raise GeometryError(f"stimulation pathway {s.pathway} out of range")
        if not 0 <= s.layer < config.num_layers:
            raise GeometryError(f"stimulation layer {s.layer} out of range")
        nf = config.pathways[s.pathway].layers[s.layer].num_features
        if s.bias.size != nf:
            raise GeometryError(f"stimulation bias has {s.bias.size} entries, layer has {nf} features")


def mdca_step(x, state: NetworkState, config: NetworkConfig,
              stim: Sequence[Stimulation] | None = None) -> NetworkState:
    """Advance every layer one Euler step from the same residual snapshot."""
    x = np.asarray(x)
    stim = list(stim or ())
    _check_stimulation(stim, config)
    p = config.lca
    r = state.residual
    states = []
    for m, pw in enumerate(config.pathways):
        row = []
        drive = r
        for k, d in enumerate(pw.layers):
            drive = analyze(drive, d)
            prev = state.states[m][k]
            current = drive - prev.u + prev.a
            for s in stim:
                if s.pathway == m and s.layer == k and s.gain != 0:
                    current = current + (s.gain * s.bias).astype(current.dtype)
            u = prev.u + np.asarray(config.rate(k), dtype=current.dtype) * current
            row.append(LayerState(u, threshold(u, config.lam(k), p.threshold_kind)))
        states.append(row)
    xhat = reconstruct([[s.a for s in row] for row in states], config)
    return NetworkState(states, xhat, x - xhat, state.t + 1)


def measure(state: NetworkState, config: NetworkConfig) -> TraceRecord:
    axes = (-3, -2, -1)
    l1, pct, l2 = [], [], []
    for pw, row in zip(config.pathways, state.states):
        l1.append([np.sum(np.abs(s.a), axis=axes, dtype=np.float64) for s in row])
        pct.append([np.count_nonzero(s.a, axis=axes) / np.prod(s.a.shape[-3:]) for s in row])
        l2.append([
            np.sqrt(np.sum(np.square(compose_synthesize(s.a, pw, k), dtype=np.float64), axis=axes))
            for k, s in enumerate(row)
        ])

    def stack(v):
        # nested (M, K) lists of batch-shaped arrays -> (..., M, K)
        return np.moveaxis(np.asarray(v, dtype=np.float64), (0, 1), (-2, -1))

    mse = np.mean(np.square(state.residual, dtype=np.float64), axis=axes)
    return TraceRecord(state.t, stack(l1), stack(pct), stack(l2),
                       float(mse) if np.ndim(mse) == 0 else mse)


def network_energy(x, state: NetworkState, config: NetworkConfig):
    axes = (-3, -2, -1)
    r = np.asarray(state.residual, dtype=np.float64)
    e = 0.5 * np.sum(r * r, axis=axes)
    for row in state.states:
        for k, s in enumerate(row):
            e = e + config.lam(k) * np.sum(np.abs(s.a), axis=axes, dtype=np.float64)
    return float(e) if np.ndim(e) == 0 else e


def infer(x, config: NetworkConfig, stim: Sequence[Stimulation] | None = None,
          trace_every: int | None = 1, timesteps: int | None = None,
          callback: Callable[[NetworkState], None] | None = None):
    """Run competitive inference from rest.

    Records a :class:`TraceRecord` at ``t = 0``, every ``trace_every``
    steps, and at the final step (``trace_every=None`` disables tracing).
    ``callback`` is called with the state at each recorded step.
    """
    if trace_every is not None and trace_every < 1:
        raise ValueError("trace_every must be at least 1")
    x = np.asarray(x)
    steps = config.lca.timesteps if timesteps is None else int(timesteps)
    state = zero_state(x, config)
    if stim:
        _check_stimulation(stim, config)
    traces: list[TraceRecord] = []

    def record():
        if trace_every is None:
            return
        traces.append(measure(state, config))
        if callback is not None:
            callback(state)

    record()
    for t in range(1, steps + 1):
        state = mdca_step(x, state, config, stim)
        if trace_every is not None and (t % trace_every == 0 or t == steps):
            record()
    return state, traces
