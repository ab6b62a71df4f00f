"""Single-layer locally competitive inference.

The membrane update is integrated with explicit Euler steps in residual
form::

    r  = x - D a
    u' = u + (dt / tau) * (-u + D^T r + a)
    a' = T(u')

which is algebraically the leak / drive / lateral-inhibition ODE with the
self-interaction removed, without ever forming the Gram operator ``D^T D``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import analyze, l1_norm, synthesize

THRESHOLD_KINDS = ("as-written", "soft")


@dataclass(frozen=True)
class LcaParams:
    lam: float = 0.1
    tau: float = 1.0
    dt: float = 0.1
    timesteps: int = 400
    threshold_kind: str = "as-written"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.tau <= 0 or self.dt <= 0:
            raise ValueError("tau and dt must be positive")
        if self.dt / self.tau > 0.5:
            raise ValueError(f"dt/tau = {self.dt / self.tau:g} exceeds the 0.5 stability guard")
        if self.timesteps < 1:
            raise ValueError("timesteps must be positive")
        if self.threshold_kind not in THRESHOLD_KINDS:
            raise ValueError(f"threshold_kind must be one of {THRESHOLD_KINDS}")

    @property
    def rate(self) -> float:
        return self.dt / self.tau


def threshold(u, lam: float, kind: str = "as-written"):
    """Transfer function from membrane potential to activation.

    ``"as-written"`` passes ``u`` through unchanged wherever ``u > lam``
    (a hard, one-sided threshold); ``"soft"`` returns ``max(u - lam, 0)``.
    Both are zero for every ``u <= lam``.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    u = np.asarray(u)
    if kind == "as-written":
        out = np.where(u > lam, u, 0)
    elif kind == "soft":
        out = np.maximum(u - lam, 0)
    else:
        raise ValueError(f"unknown threshold kind {kind!r}")
    out = out.astype(u.dtype if np.issubdtype(u.dtype, np.floating) else np.float64, copy=False)
    return out[()] if out.ndim == 0 else out


@dataclass
class LayerState:
    u: np.ndarray
    a: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.a is None:
            self.a = np.zeros_like(self.u)

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "LayerState":
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))


def lca_step(x, state: LayerState, d, p: LcaParams) -> LayerState:
    r = x - synthesize(state.a, d)
    drive = analyze(r, d)
    if drive.shape != state.u.shape:
        raise ValueError(f"state shape {state.u.shape} does not match drive {drive.shape}")
    rate = np.asarray(p.rate, dtype=state.u.dtype)
    u = state.u + rate * (drive - state.u + state.a)
    return LayerState(u, threshold(u, p.lam, p.threshold_kind))


def energy(x, a, d, lam: float):
    """``0.5 * ||x - D a||^2 + lam * ||a||_1``; per sample when ``x`` is batched."""
    r = np.asarray(x, dtype=np.float64) - synthesize(a, d).astype(np.float64)
    axes = (-3, -2, -1)
    e = 0.5 * np.sum(r * r, axis=axes) + lam * l1_norm(a, axis=axes)
    return float(e) if np.ndim(e) == 0 else e


def solve_single_layer(x, d, p: LcaParams, state: LayerState | None = None):
    """Run ``p.timesteps`` LCA steps from rest.

    Returns the final :class:`LayerState` and the energy trace, whose first
    entry is the energy of the starting state (so it has ``timesteps + 1``
    values).
    """
    x = np.asarray(x)
    if state is None:
        h, w = x.shape[-3] // d.stride, x.shape[-2] // d.stride
        dtype = np.result_type(x.dtype, d.weights.dtype)
        state = LayerState.zeros(x.shape[:-3] + (h, w, d.num_features), dtype=dtype)
    energies = [energy(x, state.a, d, p.lam)]
    for _ in range(p.timesteps):
        state = lca_step(x, state, d, p)
        energies.append(energy(x, state.a, d, p.lam))
    return state, np.array(energies)
