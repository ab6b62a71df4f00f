"""Image ingestion, labelled directory datasets and the flat run configuration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")
# Pillow reports binary PGM/PPM as "PPM"
SUPPORTED_FORMATS = ("PNG", "PPM")


class ImageFormatError(ValueError):
    """Unsupported, undecodable or empty image file."""


class ConfigError(ValueError):
    def __init__(self, msg, lineno=None, path=None):
        where = f"{path or '<config>'}:{lineno}: " if lineno is not None else ""
        super().__init__(where + msg)
        self.lineno = lineno


# -- images -------------------------------------------------------------------


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with pixel-centre alignment and edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape[:2]

    def taps(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, wr = taps(in_h, out_h)
    c0, c1, wc = taps(in_w, out_w)
    wr = wr[:, None, None]
    rows = img[r0] * (1 - wr) + img[r1] * wr
    wc = wc[None, :, None]
    return rows[:, c0] * (1 - wc) + rows[:, c1] * wc


def preprocess(x: np.ndarray) -> np.ndarray:
    """Per-image, per-channel mean subtraction."""
    x = np.asarray(x)
    return (x - x.mean(axis=(-3, -2), keepdims=True, dtype=np.float64)).astype(np.float32)


def decode_image(path, channels: int | None = None) -> np.ndarray:
    """Decode a PNG / binary PPM / PGM file into an ``(H, W, C)`` float array in ``[0, 1]``."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in SUPPORTED_FORMATS:
                raise ImageFormatError(f"{path}: unsupported image format {im.format}")
            im.load()
            if im.mode.startswith("I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                arr = arr[..., None]
            else:
                if channels is None:
                    mode = "L" if im.mode in ("1", "L", "LA") else "RGB"
                else:
                    mode = "L" if channels == 1 else "RGB"
                im = im.convert(mode)
                arr = np.asarray(im, dtype=np.float64) / 255.0
                if arr.ndim == 2:
                    arr = arr[..., None]
    except ImageFormatError:
        raise
    except FileNotFoundError:
        raise
    except Exception as exc:  # Pillow raises a zoo of types on bad data
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    if arr.size == 0 or 0 in arr.shape:
        raise ImageFormatError(f"{path}: zero-size image")
    if channels is not None and arr.shape[-1] != channels:
        arr = np.repeat(arr[..., :1], channels, axis=-1)
    return arr


def load_image(path, target_h: int, target_w: int, channels: int | None = None) -> np.ndarray:
    """Decode, resize to ``target_h x target_w``, scale to [0, 1] and mean-subtract."""
    arr = decode_image(path, channels)
    if arr.shape[:2] != (target_h, target_w):
        arr = resize_bilinear(arr, target_h, target_w)
    return preprocess(arr[None])[0]


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"image directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_images(paths, target_h, target_w, channels=None):
    """Load many images, skipping (and logging) the ones that fail to decode.

    Returns ``(array (N, H, W, C), kept_paths)``.
    """
    out, kept = [], []
    for p in paths:
        try:
            out.append(load_image(p, target_h, target_w, channels))
            kept.append(Path(p))
        except ImageFormatError as exc:
            log.warning("skipping %s", exc)
    if not out:
        return np.zeros((0, target_h, target_w, channels or 1), np.float32), kept
    return np.stack(out), kept


def save_image(path, img, normalize: bool = True) -> None:
    """Write an ``(H, W, C)`` array as 8-bit PNG (or PGM/PPM by suffix).

    With ``normalize`` the array is min-max stretched to the full range,
    otherwise samples are taken to lie in [0, 1].
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[-1] == 1:
        a = a[..., 0]
    if normalize:
        lo, hi = a.min(), a.max()
        a = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    a = np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(a).save(path)


@dataclass
class LabeledDataset:
    items: list[tuple[Path, str]]

    @classmethod
    def from_root(cls, root, labels=None) -> "LabeledDataset":
        """Collect ``root/<label>/<image>`` files in sorted (label, name) order."""
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(f"dataset root {root} does not exist")
        dirs = sorted(d for d in root.iterdir() if d.is_dir())
        if labels is not None:
            labels = list(labels)
            missing = set(labels) - {d.name for d in dirs}
            if missing:
                raise FileNotFoundError(f"labels without a directory under {root}: {sorted(missing)}")
            dirs = [d for d in dirs if d.name in labels]
        return cls([(p, d.name) for d in dirs for p in list_images(d)])

    @property
    def labels(self) -> list[str]:
        return sorted({lab for _, lab in self.items})

    def shuffled(self, seed) -> "LabeledDataset":
        order = np.random.default_rng(seed).permutation(len(self.items))
        return LabeledDataset([self.items[i] for i in order])

    def __len__(self):
        return len(self.items)


# -- configuration --------------------------------------------------------------


def parse_config_text(text: str, path=None) -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines; returns ``{key: (value, lineno)}``."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno, path)
        if key in out:
            raise ConfigError(f"duplicate key {key!r} (first set on line {out[key][1]})", lineno, path)
        out[key] = (value, lineno)
    return out


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(s) for s in v.split(",") if s.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(s) for s in v.split(",") if s.strip())


def _names(v: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in v.split(",") if s.strip())


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class RunConfig:
    image_h: int = 128
    image_w: int = 128
    image_c: int = 3
    pathways: tuple[str, ...] = ("face", "object")
    # (features, kernel, stride) per layer, bottom first
    layers: tuple[tuple[int, int, int], ...] = ((128, 8, 4), (128, 8, 4), (256, 8, 4))
    lam: tuple[float, ...] = (0.1,)
    tau: tuple[float, ...] = (1.0,)
    dt: float = 0.1
    timesteps: int = 400
    threshold_kind: str = "as-written"
    learning_rate: float = 0.01
    epochs: int = 1
    batch_size: int = 1
    train_timesteps: int = 400
    timestep_budget: int = 0
    seed: int = 0
    data: dict[str, str] = field(default_factory=dict)
    out: str = "out"
    face_pathway: str = "face"
    object_pathway: str = "object"
    threshold: float = 1.4
    fit_threshold: bool = False
    trace_every: int = 1
    trace_images_at: tuple[int, ...] = ()
    input: str = ""
    classify_face: str = ""
    classify_nonface: str = ""
    ata_pathway: str = "face"
    ata_layer: int = 0
    ata_images: str = ""
    stim_pathway: str = "face"
    stim_layer: int = 0
    stim_response: str = ""
    stim_images: str = ""
    gain: float = 100.0
    eval_root: str = ""
    eval_negative_labels: tuple[str, ...] = ()
    preprocess: str = "mean_subtract"

    # config-file key -> (attribute, parser)
    _SCALARS = {
        "image_h": int, "image_w": int, "image_c": int, "pathways": _names,
        "lambda": _floats, "tau": _floats, "dt": float, "timesteps": int,
        "threshold_kind": str, "learning_rate": float, "epochs": int, "batch_size": int,
        "train_timesteps": int, "timestep_budget": int, "seed": int, "out": str,
        "face_pathway": str, "object_pathway": str, "threshold": float, "fit_threshold": _bool,
        "trace_every": int, "trace_images_at": _ints, "input": str,
        "classify.face": str, "classify.nonface": str,
        "ata.pathway": str, "ata.layer": int, "ata.images": str,
        "stim.pathway": str, "stim.layer": int, "stim.response": str, "stim.images": str,
        "gain": float, "eval.root": str, "eval.negative_labels": _names, "preprocess": str,
    }

    @staticmethod
    def _attr(key: str) -> str:
        return {"lambda": "lam"}.get(key, key.replace(".", "_"))

    @classmethod
    def from_text(cls, text: str, path=None) -> "RunConfig":
        raw = parse_config_text(text, path)
        cfg = cls()
        layer_keys = {}
        for key, (value, lineno) in raw.items():
            try:
                if key.startswith("data."):
                    cfg.data[key[5:]] = value
                elif key.startswith("layer") and key[5:].isdigit():
                    spec = _ints(value)
                    if len(spec) != 3:
                        raise ValueError("layer spec is 'features, kernel, stride'")
                    layer_keys[int(key[5:])] = (spec, lineno)
                elif key in cls._SCALARS:
                    setattr(cfg, cls._attr(key), cls._SCALARS[key](value))
                else:
                    raise ValueError(f"unknown key {key!r}")
            except ValueError as exc:
                raise ConfigError(str(exc), lineno, path) from None
        if layer_keys:
            idx = sorted(layer_keys)
            if idx != list(range(1, len(idx) + 1)):
                raise ConfigError(f"layer keys must be layer1..layerN, got {idx}",
                                  layer_keys[idx[-1]][1], path)
            cfg.layers = tuple(layer_keys[i][0] for i in idx)
        try:
            cfg.validate()
        except ValueError as exc:
            raise ConfigError(str(exc), None, path) from None
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", None, path) from None
        return cls.from_text(text, path)

    def validate(self):
        counts = [self.image_h, self.image_w, self.image_c, self.timesteps, self.epochs,
                  self.batch_size, self.train_timesteps, self.trace_every]
        if min(counts) < 1 or any(min(spec) < 1 for spec in self.layers):
            raise ValueError("all counts must be positive")
        for name, vals in (("lambda", self.lam), ("tau", self.tau)):
            if len(vals) not in (1, len(self.layers)):
                raise ValueError(f"{name} needs 1 or {len(self.layers)} values")
        if self.threshold_kind not in ("as-written", "soft"):
            raise ValueError("threshold_kind must be 'as-written' or 'soft'")
        if self.preprocess != "mean_subtract":
            raise ValueError("only preprocess = mean_subtract is supported")
        if len(set(self.pathways)) != len(self.pathways) or not self.pathways:
            raise ValueError("pathway names must be unique and non-empty")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")

    def to_text(self) -> str:
        """Effective configuration in the same flat format, loadable by :meth:`from_text`."""
        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, tuple):
                return ", ".join(fmt(x) for x in v)
            if isinstance(v, float):
                return repr(v)
            return str(v)

        lines = []
        for key in self._SCALARS:
            if key in ("lambda",):
                lines.append(f"lambda = {fmt(self.lam)}")
                continue
            lines.append(f"{key} = {fmt(getattr(self, self._attr(key)))}")
            if key == "pathways":
                for i, spec in enumerate(self.layers, 1):
                    lines.append(f"layer{i} = {fmt(spec)}")
        for name in sorted(self.data):
            lines.append(f"data.{name} = {self.data[name]}")
        return "\n".join(lines) + "\n"

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.image_h, self.image_w, self.image_c)

    def per_layer(self, values) -> tuple[float, ...] | None:
        return None if len(values) == 1 else tuple(values)

