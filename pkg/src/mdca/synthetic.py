"""Procedural two-class image corpora for desk-scale experiments.

Class A ("face-like"): a centred ring with two eye bars in its upper half and
a mouth bar in its lower half, with jittered position, size and contrast.
Class B ("object"): oriented texture fields built from gratings of random
orientation, period and phase.

Images are float32 ``(size, size, 1)`` arrays with samples in ``[0, 1]``;
:func:`mdca.io.preprocess` is applied by the loaders, not here.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy + 0.5, xx + 0.5


def _bar(yy, xx, cy, cx, half_len, half_thick):
    # horizontal capsule with a one-pixel soft edge
    dx = np.maximum(np.abs(xx - cx) - half_len, 0.0)
    dist = np.hypot(dx, yy - cy)
    return np.clip(half_thick + 0.5 - dist, 0.0, 1.0)


def face_like(rng, size=32, noise=0.03):
    yy, xx = _grid(size)
    s = size / 32.0
    cy = size / 2 + rng.uniform(-1.5, 1.5) * s
    cx = size / 2 + rng.uniform(-1.5, 1.5) * s
    r = rng.uniform(10.0, 12.5) * s
    thick = rng.uniform(0.9, 1.4) * s
    ring = np.clip(thick + 0.5 - np.abs(np.hypot(yy - cy, xx - cx) - r), 0.0, 1.0)
    eye_dy = rng.uniform(0.28, 0.38) * r
    eye_dx = rng.uniform(0.34, 0.42) * r
    eye_len = rng.uniform(0.10, 0.16) * r
    eyes = np.maximum(_bar(yy, xx, cy - eye_dy, cx - eye_dx, eye_len, thick),
                      _bar(yy, xx, cy - eye_dy, cx + eye_dx, eye_len, thick))
    mouth = _bar(yy, xx, cy + rng.uniform(0.38, 0.5) * r, cx, rng.uniform(0.25, 0.38) * r, thick)
    img = np.maximum(np.maximum(ring, eyes), mouth) * rng.uniform(0.6, 1.0)
    img += noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)[..., None]


def oriented_texture(rng, size=32, noise=0.03):
    yy, xx = _grid(size)
    theta = rng.uniform(0.0, np.pi)
    period = rng.uniform(4.0, 9.0) * size / 32.0
    phase = rng.uniform(0.0, 2 * np.pi)
    proj = xx * np.cos(theta) + yy * np.sin(theta)
    img = 0.5 + 0.5 * rng.uniform(0.6, 1.0) * np.sin(2 * np.pi * proj / period + phase)
    img += noise * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)[..., None]


def bar_generators(size=8):
    """Unit-norm line images: two rows, two columns and both diagonals."""
    gens = []
    for i in (size // 4, size - 1 - size // 4):
        row = np.zeros((size, size))
        row[i, :] = 1
        gens += [row, row.T.copy()]
    gens += [np.eye(size), np.eye(size)[::-1].copy()]
    g = np.array(gens)[..., None]
    return g / np.sqrt(np.sum(g * g, axis=(1, 2, 3), keepdims=True))


def oriented_bars(n, rng=None, size=8, per_image=2, noise=0.02):
    """Sums of ``per_image`` distinct generator bars with random positive amplitudes.

    Returns ``(images, generators)``.
    """
    rng = np.random.default_rng(rng)
    g = bar_generators(size)
    out = np.zeros((n, size, size, 1))
    for i in range(n):
        for j in rng.choice(len(g), size=per_image, replace=False):
            out[i] += rng.uniform(0.5, 1.5) * g[j]
    out += noise * rng.standard_normal(out.shape)
    return out.astype(np.float32), g.astype(np.float32)


def make_corpus(kind, n, rng=None, size=32):
    """Stack of ``n`` images of one class: ``"face"`` or ``"object"``."""
    rng = np.random.default_rng(rng)
    gen = {"face": face_like, "object": oriented_texture}[kind]
    return np.stack([gen(rng, size) for _ in range(n)])


def write_corpus(root, n_per_class, seed=0, size=32):
    """Write ``root/face/*.png`` and ``root/object/*.png``."""
    from .io import save_image

    rng = np.random.default_rng(seed)
    root = Path(root)
    for kind in ("face", "object"):
        (root / kind).mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(make_corpus(kind, n_per_class, rng, size)):
            save_image(root / kind / f"{kind}_{i:04d}.png", img, normalize=False)
    return root


def main(argv=None):
    ap = argparse.ArgumentParser(description="write a synthetic face/object corpus")
    ap.add_argument("root")
    ap.add_argument("-n", type=int, default=100, help="images per class")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=32)
    args = ap.parse_args(argv)
    write_corpus(args.root, args.n, args.seed, args.size)


if __name__ == "__main__":
    main()
