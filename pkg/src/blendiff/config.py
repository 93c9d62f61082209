"""Run configuration: one versioned JSON document validated before any work.

Unknown keys are rejected.  Missing keys take the defaults below.  Relative
paths are resolved against the config file's directory, and the resolved
document (absolute paths, all defaults filled) is what commands snapshot.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

VERSION = 1

DEFAULTS = {
    "version": VERSION,
    "seed": 0,
    "output_dir": "runs",
    "layout": None,
    "fps": 25.0,
    "schedule": {"T": 1000, "beta_start": 1e-4, "beta_end": 0.02, "kind": "linear"},
    "denoiser": {"width": 128, "layers": 4, "heads": 4, "ff_width": 512},
    "train": {"epochs": 1000, "batch_size": 64, "lr": 4e-4, "drop_prob": 0.1, "chunk_len": 32,
              "normalize": True},
    "lip": {"hidden": 64, "style_width": 32, "conv_layers": 2, "kernel": 3,
            "window": 8, "epochs": 50, "batch_size": 32, "lr": 1e-4},
    "sampler": {"chunk_len": 32, "guidance": 2.0, "step": None, "autoregressive": True},
    "audio": {"extractor": "logmel", "feature_dim": 29},
    "dataset": {"manifest": None, "train_clips": None},
    "oracle": {"seed": 0, "n_clips": 8, "frames_per_clip": 96, "audio_dim": 8,
               "blink_width": 5, "archetypes": None},
    "generate": {"audio": None, "style_clip": None, "checkpoint": None, "output": "generated.csv"},
    "refine": {"sequence": None, "audio": None, "style_clip": None, "checkpoint": None,
               "output": "refined.csv"},
    "eval": {"pred": [], "truth": [], "ablation_on": None, "ablation_off": None,
             "channel": "browDownRight", "cutoff_hz": 2.0, "output": "eval.json"},
}

PATH_KEYS = {
    (): ("output_dir", "layout"),
    ("dataset",): ("manifest",),
    ("generate",): ("audio", "checkpoint"),
    ("refine",): ("sequence", "audio", "checkpoint"),
    ("eval",): ("pred", "truth", "ablation_on", "ablation_off"),
}

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_path = {"type": ["string", "null"]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required)}


SCHEMA = _obj({
    "version": {"const": VERSION},
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string"},
    "layout": _path,
    "fps": {"type": "number", "exclusiveMinimum": 0},
    "schedule": _obj({
        "T": _pos_int,
        "beta_start": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "beta_end": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "kind": {"enum": ["linear"]},
    }),
    "denoiser": _obj({"width": _pos_int, "layers": _pos_int, "heads": _pos_int, "ff_width": _pos_int}),
    "train": _obj({
        "epochs": _pos_int, "batch_size": _pos_int,
        "lr": {"type": "number", "minimum": 0},
        "drop_prob": {"type": "number", "minimum": 0, "maximum": 1},
        "chunk_len": {"type": "integer", "minimum": 4},
        "normalize": {"type": "boolean"},
    }),
    "lip": _obj({
        "hidden": _pos_int, "style_width": _pos_int, "conv_layers": _pos_int, "kernel": _pos_int,
        "window": _pos_int, "epochs": _pos_int, "batch_size": _pos_int,
        "lr": {"type": "number", "minimum": 0},
    }),
    "sampler": _obj({
        "chunk_len": {"type": "integer", "minimum": 4},
        "guidance": {"type": ["number", "null"]},
        "step": {"type": ["integer", "null"], "minimum": 1},
        "autoregressive": {"type": "boolean"},
    }),
    "audio": _obj({"extractor": {"enum": ["logmel", "passthrough"]}, "feature_dim": _pos_int}),
    "dataset": _obj({"manifest": _path,
                     "train_clips": {"type": ["array", "null"], "items": {"type": "string"}}}),
    "oracle": _obj({
        "seed": {"type": "integer", "minimum": 0}, "n_clips": _pos_int, "frames_per_clip": _pos_int,
        "audio_dim": _pos_int, "blink_width": _pos_int,
        "archetypes": {"type": ["object", "null"], "additionalProperties": _obj({
            "brow_amplitude": _num, "blink_rate": _num, "mouth_openness": _num},
            required=("brow_amplitude", "blink_rate", "mouth_openness"))},
    }),
    "generate": _obj({"audio": _path, "style_clip": {"type": ["string", "null"]},
                      "checkpoint": _path, "output": {"type": "string"}}),
    "refine": _obj({"sequence": _path, "audio": _path, "style_clip": {"type": ["string", "null"]},
                    "checkpoint": _path, "output": {"type": "string"}}),
    "eval": _obj({
        "pred": {"type": "array", "items": {"type": "string"}},
        "truth": {"type": "array", "items": {"type": "string"}},
        "ablation_on": _path, "ablation_off": _path,
        "channel": {"type": "string"}, "cutoff_hz": {"type": "number", "exclusiveMinimum": 0},
        "output": {"type": "string"},
    }),
}, required=("version",))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


def _absolutize(value, base: Path):
    if value is None:
        return None
    if isinstance(value, list):
        return [_absolutize(v, base) for v in value]
    p = Path(value).expanduser()
    return str(p if p.is_absolute() else (base / p).resolve())


def resolve(doc: dict, base_dir=".") -> dict:
    """Validate ``doc``, fill defaults and make every path absolute."""
    validate(doc)
    cfg = _merge(DEFAULTS, doc)
    validate(cfg)
    base = Path(base_dir).resolve()
    for section, keys in PATH_KEYS.items():
        node = cfg
        for s in section:
            node = node[s]
        for k in keys:
            node[k] = _absolutize(node[k], base)
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return resolve(doc, path.parent)


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
