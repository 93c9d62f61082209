"""Command-line entry points.

Every command takes ``--config``; command flags override the matching config
fields and the merged document is written next to the outputs as
``<command>.resolved.json``.  Re-running a command with that snapshot as its
only input reproduces its outputs.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The log level comes from the ``BLENDIFF_LOG_LEVEL`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .audio import AudioFeatureSequence, load_audio, read_features
from .data import (
    OracleSpec, chunk_clips, generate_oracle, load_manifest, load_sequence, save_sequence,
)
from .denoiser import DenoiserConfig, DenoiserModel, TrainConfig, load_denoiser, save_denoiser, train
from .diffusion import TERMINAL_ALPHA_BAR_MAX, build_schedule
from .errors import BlendiffError, ConfigError, DatasetError
from .layout import ExpressionSequence, clamp_values, default_layout, load_layout
from .lip import LipConfig, LipModel, LipTrainConfig, lip_dataset, load_lip, refine, save_lip, train_lip
from .metrics import build_report, evaluate_sequence, report_is_finite
from .sampler import SamplerConfig, continuity_jump, long_term_sample, save_generated, sidecar_path

log = logging.getLogger("blendiff")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(BlendiffError):
    pass


def _schedule(cfg):
    s = cfg["schedule"]
    return build_schedule(s["T"], s["beta_start"], s["beta_end"], s["kind"],
                          terminal_max=TERMINAL_ALPHA_BAR_MAX)


def _layout(cfg):
    return load_layout(cfg["layout"]) if cfg["layout"] else None


def _manifest(cfg):
    path = cfg["dataset"]["manifest"]
    if not path:
        raise DatasetError("config has no dataset.manifest")
    if not Path(path).exists():
        raise DatasetError(f"dataset manifest {path} does not exist")
    return load_manifest(path)


def _training_clips(cfg, manifest):
    ids = cfg["dataset"]["train_clips"] or manifest.clip_ids
    out = []
    for cid in ids:
        seq, audio, _ = manifest.load_clip(cid)
        out.append((cid, seq, audio))
    if not out:
        raise DatasetError("no training clips selected")
    return out


def _outdir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(cfg, command):
    cfgmod.dump_config(cfg, _outdir(cfg) / f"{command}.resolved.json")


def _write_curve(path, curve):
    lines = ["epoch,loss"] + [f"{i},{v!r}" for i, v in enumerate(curve)]
    Path(path).write_text("\n".join(lines) + "\n")


# commands ---------------------------------------------------------------

def cmd_oracle_gen(cfg, args):
    o = cfg["oracle"]
    kwargs = {k: o[k] for k in ("seed", "n_clips", "frames_per_clip", "audio_dim", "blink_width")}
    kwargs["fps"] = cfg["fps"]
    if o["archetypes"]:
        kwargs["archetypes"] = o["archetypes"]
    spec = OracleSpec(**kwargs)
    if args.out:
        cfg["dataset"]["manifest"] = str((Path(args.out) / "manifest.json").resolve())
    target = cfg["dataset"]["manifest"]
    if not target:
        raise UsageError("oracle-gen needs --out or dataset.manifest in the config")
    manifest = generate_oracle(spec, Path(target).parent, _layout(cfg))
    _snapshot(cfg, "oracle-gen")
    log.info("wrote %d clips to %s", len(manifest.entries), manifest.root)


def cmd_train_diffusion(cfg, args):
    manifest = _manifest(cfg)
    schedule = _schedule(cfg)
    tc = TrainConfig(seed=cfg["seed"], **cfg["train"])
    chunks = chunk_clips(_training_clips(cfg, manifest), tc.chunk_len)
    if not chunks:
        raise DatasetError(f"no clip is at least {tc.chunk_len} frames long")
    dim = manifest.layout.dim
    audio_dim = chunks[0].audio.shape[1]
    mcfg = DenoiserConfig(dim, dim + 1 + audio_dim, **cfg["denoiser"])
    model = DenoiserModel(mcfg, seed=cfg["seed"])
    _snapshot(cfg, "train-diffusion")
    result = train(model, chunks, tc, schedule)
    out = _outdir(cfg)
    save_denoiser(out / "diffusion.ckpt", model, optimizer=result.optimizer, epoch=tc.epochs,
                  rng=result.rng, extra={"schedule": cfg["schedule"], "layout": manifest.layout.to_dict()})
    _write_curve(out / "diffusion_loss.csv", result.loss_curve)


def cmd_train_lip(cfg, args):
    manifest = _manifest(cfg)
    lc = cfg["lip"]
    tc = LipTrainConfig(window=lc["window"], epochs=lc["epochs"], batch_size=lc["batch_size"],
                        lr=lc["lr"], seed=cfg["seed"])
    clips = _training_clips(cfg, manifest)
    windows = lip_dataset([(seq, audio) for _, seq, audio in clips], tc.window)
    layout = manifest.layout
    mcfg = LipConfig(windows[0].audio.shape[1], layout.dim, len(layout.mouth_mask),
                     lc["hidden"], lc["style_width"], lc["conv_layers"], lc["kernel"])
    model = LipModel(mcfg, seed=cfg["seed"])
    _snapshot(cfg, "train-lip")
    result = train_lip(model, windows, tc)
    out = _outdir(cfg)
    save_lip(out / "lip.ckpt", model, optimizer=result.optimizer, epoch=tc.epochs, rng=result.rng,
             extra={"window": tc.window, "layout": layout.to_dict()})
    _write_curve(out / "lip_loss.csv", result.loss_curve)


def _load_audio(cfg, path) -> AudioFeatureSequence:
    if path is None:
        raise UsageError("no audio input given")
    if not Path(path).exists():
        raise DatasetError(f"audio file {path} does not exist")
    if cfg["audio"]["extractor"] == "passthrough" or Path(path).suffix.lower() != ".wav":
        return AudioFeatureSequence(read_features(path), cfg["fps"])
    return load_audio(path, cfg["fps"], cfg["audio"]["feature_dim"])


def cmd_generate(cfg, args):
    g = cfg["generate"]
    for key in ("audio", "checkpoint", "style_clip"):
        if not g[key]:
            raise UsageError(f"generate needs --{key.replace('_', '-')}")
    manifest = _manifest(cfg)
    style = manifest.style_clip(g["style_clip"])
    model, _ = load_denoiser(g["checkpoint"])
    audio = _load_audio(cfg, g["audio"])
    s = cfg["sampler"]
    scfg = SamplerConfig(s["chunk_len"], s["guidance"], cfg["seed"], s["step"], s["autoregressive"])
    schedule = _schedule(cfg)
    if model.alpha_bar is not None and not np.array_equal(model.alpha_bar, schedule.alpha_bar):
        raise ConfigError("config schedule differs from the one the checkpoint was trained with")
    _snapshot(cfg, "generate")
    result = long_term_sample(model, audio, style, scfg, schedule)
    layout = manifest.layout
    result.values = clamp_values(result.values, layout)
    save_generated(_outdir(cfg) / g["output"], result, layout, scfg, cfg["fps"],
                   extra={"style_clip": g["style_clip"], "audio": g["audio"]})


def cmd_refine(cfg, args):
    r = cfg["refine"]
    for key in ("sequence", "audio", "checkpoint", "style_clip"):
        if not r[key]:
            raise UsageError(f"refine needs --{key.replace('_', '-')}")
    manifest = _manifest(cfg)
    layout = manifest.layout
    base = load_sequence(r["sequence"], layout, cfg["fps"])
    style = manifest.style_clip(r["style_clip"])
    model, meta = load_lip(r["checkpoint"])
    audio = _load_audio(cfg, r["audio"])
    _snapshot(cfg, "refine")
    window = int(meta["extra"].get("window", cfg["lip"]["window"]))
    refined = refine(model, base, audio, style, layout, window)
    vals = refined.values.copy()
    mask = list(layout.mouth_mask)
    vals[:, mask] = np.clip(vals[:, mask], 0.0, 1.0)
    out = _outdir(cfg) / r["output"]
    save_sequence(ExpressionSequence(vals, layout, cfg["fps"]), out)
    sidecar = {"fps": cfg["fps"], "source": r["sequence"], "checkpoint": r["checkpoint"],
               "style_clip": r["style_clip"], "window": window,
               "replaced_channels": [layout.channel_names[i] for i in mask]}
    src_sidecar = sidecar_path(r["sequence"])
    if src_sidecar.exists():
        sidecar["chunk_boundaries"] = json.loads(src_sidecar.read_text()).get("chunk_boundaries", [])
    sidecar_path(out).write_text(json.dumps(sidecar, indent=1) + "\n")


def _boundaries(path) -> list:
    side = sidecar_path(path)
    if side.exists():
        return json.loads(side.read_text()).get("chunk_boundaries", [])
    return []


def cmd_eval(cfg, args):
    e = cfg["eval"]
    layout = _layout(cfg) or default_layout()
    if cfg["dataset"]["manifest"] and Path(cfg["dataset"]["manifest"]).exists():
        layout = load_manifest(cfg["dataset"]["manifest"]).layout
    preds, truths = e["pred"], e["truth"]
    if truths and len(truths) != len(preds):
        raise UsageError(f"{len(preds)} predictions but {len(truths)} truths")
    if not preds and not (e["ablation_on"] and e["ablation_off"]):
        raise UsageError("eval needs --pred or an --ablation-on/--ablation-off pair")
    _snapshot(cfg, "eval")
    items = []
    for i, p in enumerate(preds):
        pred = load_sequence(p, layout, cfg["fps"])
        truth = load_sequence(truths[i], layout, cfg["fps"]) if truths else None
        items.append(evaluate_sequence(Path(p).stem, pred, truth, _boundaries(p), e["cutoff_hz"]))
    out = _outdir(cfg)
    if e["ablation_on"] and e["ablation_off"]:
        on = load_sequence(e["ablation_on"], layout, cfg["fps"])
        off = load_sequence(e["ablation_off"], layout, cfg["fps"])
        b_on, b_off = _boundaries(e["ablation_on"]), _boundaries(e["ablation_off"])
        if b_on != b_off:
            raise UsageError("ablation runs have different chunk boundaries")
        j_on, _ = continuity_jump(on, b_on)
        j_off, _ = continuity_jump(off, b_off)
        lines = ["boundary,jump_on,jump_off"]
        lines += [f"{b},{a!r},{c!r}" for b, a, c in zip(b_on, j_on.tolist(), j_off.tolist())]
        (out / "ablation_jumps.csv").write_text("\n".join(lines) + "\n")
        ch = layout.index(e["channel"])
        lines = [f"frame,{e['channel']}_on,{e['channel']}_off"]
        lines += [f"{i},{a!r},{c!r}" for i, (a, c) in enumerate(zip(on.values[:, ch].tolist(),
                                                                      off.values[:, ch].tolist()))]
        (out / "ablation_trajectory.csv").write_text("\n".join(lines) + "\n")
        items.append(evaluate_sequence("ablation_on", on, None, b_on, e["cutoff_hz"]))
        items.append(evaluate_sequence("ablation_off", off, None, b_off, e["cutoff_hz"]))
    report = build_report(items)
    (out / e["output"]).write_text(json.dumps(report, indent=1) + "\n")
    if not report_is_finite(report):
        log.error("evaluation produced non-finite metrics")
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {
    "oracle-gen": cmd_oracle_gen,
    "train-diffusion": cmd_train_diffusion,
    "train-lip": cmd_train_lip,
    "generate": cmd_generate,
    "refine": cmd_refine,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blendiff", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="run-config JSON")
        p.add_argument("--output-dir", help="override output_dir")
        p.add_argument("--seed", type=int, help="override the global seed")
        return p

    p = add("oracle-gen", "write a synthetic oracle dataset")
    p.add_argument("--out", help="dataset directory (default: directory of dataset.manifest)")
    add("train-diffusion", "train the sequence denoiser")
    add("train-lip", "train the mouth refinement model")
    p = add("generate", "sample a long sequence for an audio track")
    p.add_argument("--audio")
    p.add_argument("--style-clip")
    p.add_argument("--checkpoint")
    p.add_argument("--output")
    p.add_argument("--guidance", type=float)
    p.add_argument("--no-autoregressive", action="store_true",
                   help="drop the initial-state condition (continuity ablation)")
    p = add("refine", "replace mouth channels with the refinement model's output")
    p.add_argument("--sequence")
    p.add_argument("--audio")
    p.add_argument("--style-clip")
    p.add_argument("--checkpoint")
    p.add_argument("--output")
    p = add("eval", "compute metrics and write an evaluation report")
    p.add_argument("--pred", nargs="+")
    p.add_argument("--truth", nargs="+")
    p.add_argument("--ablation-on")
    p.add_argument("--ablation-off")
    p.add_argument("--channel")
    p.add_argument("--output")
    return parser


def _apply_overrides(cfg: dict, args) -> dict:
    cwd = Path.cwd()

    def path(v):
        return None if v is None else str((cwd / v).resolve())

    if args.output_dir:
        cfg["output_dir"] = path(args.output_dir)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.command == "generate":
        g = cfg["generate"]
        for key in ("audio", "checkpoint"):
            if getattr(args, key):
                g[key] = path(getattr(args, key))
        if args.style_clip:
            g["style_clip"] = args.style_clip
        if args.output:
            g["output"] = args.output
        if args.guidance is not None:
            cfg["sampler"]["guidance"] = args.guidance
        if args.no_autoregressive:
            cfg["sampler"]["autoregressive"] = False
    elif args.command == "refine":
        r = cfg["refine"]
        for key in ("sequence", "audio", "checkpoint"):
            if getattr(args, key):
                r[key] = path(getattr(args, key))
        if args.style_clip:
            r["style_clip"] = args.style_clip
        if args.output:
            r["output"] = args.output
    elif args.command == "eval":
        e = cfg["eval"]
        if args.pred:
            e["pred"] = [path(p) for p in args.pred]
        if args.truth:
            e["truth"] = [path(p) for p in args.truth]
        for key in ("ablation_on", "ablation_off"):
            if getattr(args, key):
                e[key] = path(getattr(args, key))
        if args.channel:
            e["channel"] = args.channel
        if args.output:
            e["output"] = args.output
    cfgmod.validate(cfg)
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BLENDIFF_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = _apply_overrides(cfgmod.load_config(args.config), args)
        code = COMMANDS[args.command](cfg, args)
        return EXIT_OK if code is None else code
    except (ConfigError, UsageError, DatasetError) as exc:
        print(f"blendiff {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlendiffError as exc:
        print(f"blendiff {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
