"""Versioned checkpoint container.

A checkpoint is a zip archive with fixed timestamps (so identical runs give
identical bytes) holding ``meta.json`` and one ``.npy`` member per array::

    meta.json   {"format": "blendiff-checkpoint", "version": 1, "kind": ...,
                 "hyperparams": {...}, "epoch": int, "rng_state": {...}|null,
                 "optimizer": {"step", "lr", "betas", "eps"}|null, "extra": {...}}
    params.npy  flat float64 parameter vector
    adam_m.npy, adam_v.npy   optimizer moments (optional)
    <name>.npy  any further model buffers passed via ``arrays``
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np

from .errors import ParseError

FORMAT = "blendiff-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype="<f8"), allow_pickle=False)
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def save(path, kind: str, hyperparams: dict, params: np.ndarray, *, epoch: int = 0,
         rng_state: dict | None = None, optimizer=None, extra: dict | None = None,
         arrays: dict | None = None) -> None:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "hyperparams": hyperparams,
        "epoch": int(epoch),
        "rng_state": rng_state,
        "optimizer": None,
        "extra": extra or {},
    }
    arrays = {"params": params, **(arrays or {})}
    if optimizer is not None:
        st = optimizer.state()
        meta["optimizer"] = {k: st[k] for k in ("step", "lr", "betas", "eps")}
        arrays["adam_m"] = st["m"]
        arrays["adam_v"] = st["v"]
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("meta.json", _EPOCH),
                    json.dumps(meta, sort_keys=True, default=_json_default))
        for name, arr in arrays.items():
            zf.writestr(zipfile.ZipInfo(name + ".npy", _EPOCH), _npy_bytes(arr))


def load(path, kind: str | None = None) -> dict:
    """Returns the meta dict with arrays added under ``"arrays"``."""
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for name in zf.namelist():
                if name.endswith(".npy"):
                    arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)),
                                                                 allow_pickle=False)
    except (zipfile.BadZipFile, KeyError) as exc:
        raise ParseError(f"{path}: not a checkpoint ({exc})") from None
    if meta.get("format") != FORMAT:
        raise ParseError(f"{path}: unknown checkpoint format {meta.get('format')!r}")
    if meta.get("version") != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    if kind is not None and meta["kind"] != kind:
        raise ParseError(f"{path}: checkpoint holds a {meta['kind']!r} model, expected {kind!r}")
    meta["arrays"] = arrays
    return meta
