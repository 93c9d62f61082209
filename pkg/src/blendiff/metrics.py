"""Parameter-space evaluation metrics and the evaluation report."""

from __future__ import annotations

import math

import jsonschema
import numpy as np

from .errors import AlignmentError, DimensionError, ValidationError
from .layout import ChannelLayout, ExpressionSequence
from .sampler import continuity_jump


def _pair(pred, truth):
    a = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    b = np.asarray(getattr(truth, "values", truth), dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise AlignmentError(f"sequences have {a.shape[0]} and {b.shape[0]} frames")
    if a.shape != b.shape:
        raise DimensionError(f"sequences have shapes {a.shape} and {b.shape}")
    return a, b


def param_lmd(pred, truth) -> float:
    """Mean over frames of the L2 distance between parameter vectors.

    The parameter-space counterpart of a whole-face landmark distance.
    """
    a, b = _pair(pred, truth)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def mouth_mse(pred, truth, layout: ChannelLayout) -> float:
    a, b = _pair(pred, truth)
    mask = list(layout.mouth_mask)
    if not mask:
        return 0.0
    d = a[:, mask] - b[:, mask]
    return float(np.mean(d * d))


def eye_channels(layout: ChannelLayout) -> tuple[int, ...]:
    return layout.indices_with_prefix("eye")


def high_freq_energy(seq, cutoff: float = 2.0, fps: float | None = None, channels=None,
                     per_channel: bool = False):
    """Share of each channel's (mean-removed) spectral power above ``cutoff`` Hz.

    Defaults to the eye channels.  A constant channel has no power and scores
    0.  The scalar result averages over the channels that carry any power.
    """
    x = np.asarray(getattr(seq, "values", seq), dtype=np.float64)
    if fps is None:
        fps = getattr(seq, "fps", 25.0)
    if channels is None:
        layout = getattr(seq, "layout", None)
        channels = eye_channels(layout) if layout is not None else range(x.shape[1])
    channels = list(channels)
    sub = x[:, channels] - x[:, channels].mean(axis=0)
    power = np.abs(np.fft.rfft(sub, axis=0)) ** 2
    freqs = np.fft.rfftfreq(x.shape[0], d=1.0 / fps)
    total = power[1:].sum(axis=0)
    high = power[freqs > cutoff].sum(axis=0)
    frac = np.divide(high, total, out=np.zeros_like(high), where=total > 1e-300)
    if per_channel:
        return frac
    live = total > 1e-300
    return float(frac[live].mean()) if live.any() else 0.0


def diversity(seq) -> float:
    """Mean over channels of the temporal standard deviation."""
    x = np.asarray(getattr(seq, "values", seq), dtype=np.float64)
    return float(np.mean(x.std(axis=0)))


def differing_fraction(a, b, tol: float = 1e-3) -> float:
    """Fraction of entries where two equally shaped sequences differ by more than ``tol``."""
    x, y = _pair(a, b)
    return float(np.mean(np.abs(x - y) > tol))


REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "items", "aggregate"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": 1},
        "items": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "frames", "high_freq_energy", "diversity", "continuity"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "frames": {"type": "integer", "minimum": 0},
                    "param_lmd": {"type": "number", "minimum": 0},
                    "mouth_mse": {"type": "number", "minimum": 0},
                    "high_freq_energy": {"type": "number", "minimum": 0, "maximum": 1},
                    "diversity": {"type": "number", "minimum": 0},
                    "continuity": {
                        "type": "object",
                        "required": ["boundaries", "jumps", "max"],
                        "additionalProperties": False,
                        "properties": {
                            "boundaries": {"type": "array", "items": {"type": "integer"}},
                            "jumps": {"type": "array", "items": {"type": "number"}},
                            "max": {"type": "number", "minimum": 0},
                        },
                    },
                },
            },
        },
        "aggregate": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["mean", "min", "max", "count"],
                "properties": {
                    "mean": {"type": "number"}, "min": {"type": "number"},
                    "max": {"type": "number"}, "count": {"type": "integer"},
                },
            },
        },
    },
}

AGGREGATED = ("param_lmd", "mouth_mse", "high_freq_energy", "diversity")


def evaluate_sequence(name: str, pred: ExpressionSequence, truth: ExpressionSequence | None = None,
                      boundaries=(), cutoff: float = 2.0) -> dict:
    item = {"name": name, "frames": len(pred)}
    if truth is not None:
        item["param_lmd"] = param_lmd(pred, truth)
        item["mouth_mse"] = mouth_mse(pred, truth, pred.layout)
    item["high_freq_energy"] = high_freq_energy(pred, cutoff)
    item["diversity"] = diversity(pred)
    jumps, worst = continuity_jump(pred, list(boundaries))
    item["continuity"] = {"boundaries": [int(b) for b in boundaries],
                          "jumps": jumps.tolist(), "max": worst}
    return item


def build_report(items: list) -> dict:
    agg = {}
    for key in AGGREGATED + ("continuity_max",):
        vals = [it["continuity"]["max"] if key == "continuity_max" else it[key]
                for it in items if key == "continuity_max" or key in it]
        if vals:
            agg[key] = {"mean": float(np.mean(vals)), "min": float(np.min(vals)),
                        "max": float(np.max(vals)), "count": len(vals)}
    report = {"version": 1, "items": items, "aggregate": agg}
    validate_report(report)
    return report


def _all_numbers(obj):
    if isinstance(obj, dict):
        for v in obj.values():
            yield from _all_numbers(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _all_numbers(v)
    elif isinstance(obj, float):
        yield obj


def report_is_finite(report: dict) -> bool:
    return all(math.isfinite(v) for v in _all_numbers(report))


def validate_report(report: dict) -> None:
    try:
        jsonschema.validate(report, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"evaluation report does not match its schema: {exc.message}") from None
