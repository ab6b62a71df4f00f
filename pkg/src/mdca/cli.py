"""Command line driver: ``mdca {train,infer,trace,ata,classify,stimulate,eval} --config FILE``.

Exit status is 0 on success, 1 on usage / configuration errors and 2 on
data or file-format errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .io import (ConfigError, ImageFormatError, LabeledDataset, RunConfig, list_images,
                 load_image, load_images, save_image)
from .lca import LcaParams
from .learning import TrainConfig, train_pathway
from .network import NetworkConfig, Pathway, Stimulation, compose_synthesize, infer
from .tensor import DictionaryLayer, GeometryError

log = logging.getLogger("mdca")

BATCH = 64


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mdca", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=["train", "infer", "trace", "ata", "classify", "stimulate", "eval"])
    ap.add_argument("--config", required=True, help="flat key = value run configuration")
    ap.add_argument("--checkpoint", help="model file (written by train, read by the others)")
    ap.add_argument("--out", help="output directory (overrides 'out')")
    ap.add_argument("--seed", type=int, help="overrides 'seed'")
    ap.add_argument("--gain", type=float, help="stimulation gain (overrides 'gain')")
    ap.add_argument("--input", help="input image for infer/trace/stimulate (overrides 'input')")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


# -- helpers ------------------------------------------------------------------


def lca_params(cfg: RunConfig) -> LcaParams:
    return LcaParams(lam=cfg.lam[0], tau=cfg.tau[0], dt=cfg.dt, timesteps=cfg.timesteps,
                     threshold_kind=cfg.threshold_kind)


def network_config(cfg: RunConfig, pathways) -> NetworkConfig:
    by_name = {pw.name: pw for pw in pathways}
    missing = [n for n in cfg.pathways if n not in by_name]
    if missing:
        raise DataError(f"checkpoint lacks pathways {missing}")
    ordered = [by_name[n] for n in cfg.pathways]
    try:
        return NetworkConfig(ordered, cfg.image_shape, lca_params(cfg),
                             cfg.per_layer(cfg.lam), cfg.per_layer(cfg.tau))
    except GeometryError as exc:
        raise DataError(f"checkpoint does not fit the configured image: {exc}") from exc


def initial_pathway(cfg: RunConfig, name: str, rng) -> Pathway:
    layers, channels = [], cfg.image_c
    for features, kernel, stride in cfg.layers:
        layers.append(DictionaryLayer.random(features, kernel, channels, stride, rng))
        channels = features
    return Pathway(name, layers)


def _load_model(cfg, args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required for this command")
    path = Path(args.checkpoint)
    if not path.is_file():
        raise DataError(f"checkpoint {path} not found")
    return network_config(cfg, load_checkpoint(path))


def _layer_index(layer: int, config: NetworkConfig) -> int:
    # config files number layers from 1; 0 selects the top layer
    if layer == 0:
        return config.num_layers - 1
    if not 1 <= layer <= config.num_layers:
        raise UsageError(f"layer {layer} out of range 1..{config.num_layers}")
    return layer - 1


def _pathway_index(name: str, config: NetworkConfig) -> int:
    try:
        return config.pathway_index(name)
    except KeyError as exc:
        raise UsageError(str(exc)) from None


def _dir_images(cfg, directory, what):
    if not directory:
        raise UsageError(f"config key {what} is required")
    paths = list_images(directory)
    images, kept = load_images(paths, cfg.image_h, cfg.image_w, cfg.image_c)
    if not kept:
        raise DataError(f"no readable images in {directory}")
    return images, kept


def _input_image(cfg, args):
    path = args.input or cfg.input
    if not path:
        raise UsageError("no input image (set 'input' or pass --input)")
    return load_image(path, cfg.image_h, cfg.image_w, cfg.image_c)


def _batched_top_l1(config, images, face, other):
    f_all, o_all = [], []
    for start in range(0, len(images), BATCH):
        state, _ = infer(images[start:start + BATCH], config, trace_every=None)
        f_all.append(analysis.pathway_activity(state, face))
        o_all.append(analysis.pathway_activity(state, other))
    return np.concatenate(f_all), np.concatenate(o_all)


def _fmt(v) -> str:
    return repr(float(v))


# -- commands -----------------------------------------------------------------


def cmd_train(cfg, args, out: Path):
    rng = np.random.default_rng(cfg.seed)
    train = TrainConfig(cfg.learning_rate, cfg.train_timesteps, cfg.batch_size, cfg.epochs,
                        cfg.timestep_budget or None, cfg.seed)
    trained, rows = [], []
    for name in cfg.pathways:
        if name not in cfg.data:
            raise UsageError(f"no training directory for pathway {name!r} (set data.{name})")
        images, _ = _dir_images(cfg, cfg.data[name], f"data.{name}")
        pw, history = train_pathway(images, initial_pathway(cfg, name, rng), train, lca_params(cfg),
                                    cfg.per_layer(cfg.lam), cfg.per_layer(cfg.tau), cfg.image_shape)
        trained.append(pw)
        rows += [(name, h.epoch, h.images, _fmt(h.recon_mse), _fmt(h.percent_active)) for h in history]
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.mdca"
    save_checkpoint(ckpt, trained)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("pathway", "epoch", "images", "recon_mse", "percent_active"))
        w.writerows(rows)
    print(f"wrote {ckpt}")


def _run_single(cfg, args, out: Path, stim=None, images_at=()):
    config = _load_model(cfg, args)
    x = _input_image(cfg, args)
    wanted = set(images_at)

    def snapshot(state):
        if state.t not in wanted:
            return
        d = out / "contributions"
        d.mkdir(exist_ok=True)
        save_image(d / f"reconstruction_t{state.t:04d}.png", state.xhat)
        for k, img in enumerate(analysis.summed_layer_images(state, config)):
            save_image(d / f"all_{k + 1}_{state.t:03d}.png", img)
        for m, pw in enumerate(config.pathways):
            for k in range(config.num_layers):
                img = compose_synthesize(state.states[m][k].a, pw, k)
                save_image(d / f"{pw.name}_{k + 1}_{state.t:03d}.png", img)

    state, traces = infer(x, config, stim, trace_every=cfg.trace_every,
                          callback=snapshot if wanted else None)
    analysis.write_trace_csv(out / "trace.csv", traces, config)
    save_image(out / "reconstruction.png", state.xhat)
    m = config.pathways
    face = _pathway_index(cfg.face_pathway, config) if cfg.face_pathway in [p.name for p in m] else 0
    print(f"final recon_mse {traces[-1].recon_mse:.6g}")
    if len(m) > 1:
        other = _pathway_index(cfg.object_pathway, config)
        dec = analysis.activity_ratio(state, face, other, cfg.threshold)
        print(f"activity ratio {dec.ratio:.6g} -> {dec.label}")
    return config, state


def cmd_infer(cfg, args, out):
    _run_single(cfg, args, out)


def cmd_trace(cfg, args, out):
    _run_single(cfg, args, out, images_at=cfg.trace_images_at or (cfg.timesteps,))


def cmd_ata(cfg, args, out):
    config = _load_model(cfg, args)
    m = _pathway_index(cfg.ata_pathway, config)
    k = _layer_index(cfg.ata_layer, config)
    images, _ = _dir_images(cfg, cfg.ata_images, "ata.images")
    atas = analysis.activity_triggered_average(config, images, m, k, batch_size=BATCH)
    d = out / "ata"
    d.mkdir(exist_ok=True)
    name = config.pathways[m].name
    with open(out / "ata.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("pathway", "layer", "feature", "empty"))
        for f, img in enumerate(atas):
            w.writerow((name, k + 1, f, int(img is None)))
            if img is not None:
                save_image(d / f"{name}_{k + 1}_{f:03d}.png", img)
    print(f"{sum(a is not None for a in atas)} of {len(atas)} features active")


def _read_response(path) -> np.ndarray:
    values = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            values.append(float(row["value"]))
    if not values:
        raise DataError(f"{path}: empty response vector")
    return np.array(values)


def cmd_stimulate(cfg, args, out):
    config = _load_model(cfg, args)
    m = _pathway_index(cfg.stim_pathway, config)
    k = _layer_index(cfg.stim_layer, config)
    if cfg.stim_response and Path(cfg.stim_response).is_file():
        bias = _read_response(cfg.stim_response)
    else:
        images, _ = _dir_images(cfg, cfg.stim_images, "stim.images (or an existing stim.response)")
        if k != config.num_layers - 1:
            raise UsageError("a stored stim.response is needed for non-top layers")
        bias = analysis.mean_top_response(config, images, m, batch_size=BATCH)
        with open(out / "mean_response.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("feature", "value"))
            w.writerows((f, _fmt(v)) for f, v in enumerate(bias))
    gain = cfg.gain if args.gain is None else args.gain
    try:
        stim = [Stimulation(m, k, bias, gain)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    nf = config.pathways[m].layers[k].num_features
    if bias.size != nf:
        raise DataError(f"response vector has {bias.size} entries, layer has {nf} features")
    _run_single(cfg, args, out, stim=stim)


def cmd_classify(cfg, args, out):
    config = _load_model(cfg, args)
    face = _pathway_index(cfg.face_pathway, config)
    other = _pathway_index(cfg.object_pathway, config)
    groups = []
    for cls, key, directory in (("face", "classify.face", cfg.classify_face),
                                ("non-face", "classify.nonface", cfg.classify_nonface)):
        images, paths = _dir_images(cfg, directory, key)
        f, o = _batched_top_l1(config, images, face, other)
        groups.append((cls, paths, f, o, analysis.ratio(f, o)))
    threshold = cfg.threshold
    if cfg.fit_threshold:
        threshold = analysis.fit_threshold(groups[0][4], groups[1][4])
    correct = total = 0
    with open(out / "ratios.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("path", "class", "face_l1", "object_l1", "ratio", "predicted", "correct"))
        for cls, paths, f, o, r in groups:
            for p, fv, ov, rv in zip(paths, f, o, np.atleast_1d(r)):
                pred = analysis.RatioDecision(float(rv), threshold).label
                ok = int(pred == cls)
                correct += ok
                total += 1
                w.writerow((str(p), cls, _fmt(fv), _fmt(ov), _fmt(rv), pred, ok))
    acc = correct / total
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("threshold", "n", "correct", "accuracy"))
        w.writerow((_fmt(threshold), total, correct, _fmt(acc)))
    print(f"accuracy {acc:.4f} ({correct}/{total}) at threshold {threshold:.4g}")


def cmd_eval(cfg, args, out):
    config = _load_model(cfg, args)
    face = _pathway_index(cfg.face_pathway, config)
    other = _pathway_index(cfg.object_pathway, config)
    if not cfg.eval_root:
        raise UsageError("config key eval.root is required")
    ds = LabeledDataset.from_root(cfg.eval_root)
    if not len(ds):
        raise DataError(f"no images under {cfg.eval_root}")
    per_label = {}
    with open(out / "eval_images.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("path", "label", "expected", "ratio", "predicted", "correct"))
        for label in ds.labels:
            paths = [p for p, lab in ds.items if lab == label]
            images, kept = load_images(paths, cfg.image_h, cfg.image_w, cfg.image_c)
            expected = "non-face" if label in cfg.eval_negative_labels else "face"
            n_ok = 0
            if kept:
                f, o = _batched_top_l1(config, images, face, other)
                for p, rv in zip(kept, np.atleast_1d(analysis.ratio(f, o))):
                    pred = analysis.RatioDecision(float(rv), cfg.threshold).label
                    n_ok += pred == expected
                    w.writerow((str(p), label, expected, _fmt(rv), pred, int(pred == expected)))
            per_label[label] = (expected, len(kept), n_ok)
    with open(out / "eval_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("label", "expected", "n", "correct", "accuracy"))
        for label, (expected, n, n_ok) in per_label.items():
            acc = n_ok / n if n else float("nan")
            w.writerow((label, expected, n, n_ok, _fmt(acc)))
            print(f"{label:>24s}  {expected:>8s}  {n:6d}  {100 * acc:7.2f}%")


COMMANDS = {
    "train": cmd_train, "infer": cmd_infer, "trace": cmd_trace, "ata": cmd_ata,
    "classify": cmd_classify, "stimulate": cmd_stimulate, "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out:
            cfg = dataclasses.replace(cfg, out=args.out)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "effective_config.txt").write_text(cfg.to_text())
        COMMANDS[args.command](cfg, args, out)
    except (ConfigError, UsageError) as exc:
        print(f"mdca: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, ImageFormatError, FileNotFoundError, GeometryError) as exc:
        print(f"mdca: data error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"mdca: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
