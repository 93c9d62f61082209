"""Datasets: sequence files, clip manifests, the synthetic oracle, windows and chunks.

Sequence CSV: a header row of channel names, then one frame per row, values
written with ``repr`` so they read back bit-exact.

Manifest JSON::

    {"version": 1, "layout": "layout.json", "fps": 25.0,
     "clips": [{"clip_id", "emotion_label", "sequence", "audio"}, ...],
     "oracle": {...}}            # present only for generated datasets

Paths inside a manifest are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .audio import AudioFeatureSequence, read_features, write_features
from .errors import DatasetError, ParseError, ValidationError
from .layout import ChannelLayout, EmotionStyleClip, ExpressionSequence, default_layout, save_layout, load_layout


# sequence files ---------------------------------------------------------

def _fmt(row) -> str:
    return ",".join(repr(float(v)) for v in row)


def save_sequence(seq: ExpressionSequence, path) -> None:
    lines = [",".join(seq.layout.channel_names)]
    lines.extend(_fmt(row) for row in seq.values)
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequence(path, layout: ChannelLayout | None = None, fps: float = 25.0,
                  clamp: bool = False) -> ExpressionSequence:
    """Parse a sequence CSV, checking the header against ``layout``.

    Blendshape values outside [0, 1] trigger a warning and are clipped only
    when ``clamp`` is set.
    """
    layout = layout or default_layout()
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file", line=1)
    header = [h.strip() for h in lines[0].split(",")]
    if tuple(header) != layout.channel_names:
        raise ParseError(f"{path}: header does not match layout channel names", line=1)
    width = layout.dim
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise ParseError(f"{path}: expected {width} values, found {len(parts)}", line=lineno)
        row = []
        for ch, part in enumerate(parts):
            try:
                v = float(part)
            except ValueError:
                raise ParseError(f"{path}: malformed number {part!r}", line=lineno,
                                 channel=layout.channel_names[ch]) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: non-finite value {part.strip()!r}", line=lineno,
                                 channel=layout.channel_names[ch])
            row.append(v)
        rows.append(row)
    values = np.array(rows, dtype=np.float64).reshape(-1, width)
    e = layout.expression_dim
    out_of_range = (values[:, :e] < 0.0) | (values[:, :e] > 1.0)
    if out_of_range.any():
        r, ch = np.argwhere(out_of_range)[0]
        warnings.warn(f"{path}: {int(out_of_range.sum())} blendshape values outside [0, 1] "
                      f"(first at line {r + 2}, channel {layout.channel_names[ch]!r})")
        if clamp:
            values[:, :e] = np.clip(values[:, :e], 0.0, 1.0)
    return ExpressionSequence(values, layout, fps)


# manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class ClipEntry:
    clip_id: str
    emotion_label: str
    sequence: Path
    audio: Path


@dataclass
class ClipManifest:
    entries: list
    layout: ChannelLayout
    fps: float = 25.0
    root: Path = field(default_factory=Path)
    oracle: dict | None = None

    def __post_init__(self):
        ids = [e.clip_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate clip ids in manifest")

    @property
    def clip_ids(self) -> list:
        return [e.clip_id for e in self.entries]

    def entry(self, clip_id: str) -> ClipEntry:
        for e in self.entries:
            if e.clip_id == clip_id:
                return e
        raise DatasetError(f"unknown clip id {clip_id!r}; available: {', '.join(self.clip_ids)}")

    def load_clip(self, clip_id: str) -> tuple[ExpressionSequence, AudioFeatureSequence, str]:
        e = self.entry(clip_id)
        seq = load_sequence(e.sequence, self.layout, self.fps)
        audio = AudioFeatureSequence(read_features(e.audio), self.fps)
        return seq, audio, e.emotion_label

    def style_clip(self, clip_id: str) -> EmotionStyleClip:
        seq, _, label = self.load_clip(clip_id)
        return EmotionStyleClip(seq, label, clip_id)


def save_manifest(manifest: ClipManifest, path) -> None:
    path = Path(path)
    root = path.parent
    doc = {
        "version": 1,
        "layout": "layout.json",
        "fps": manifest.fps,
        "clips": [
            {"clip_id": e.clip_id, "emotion_label": e.emotion_label,
             "sequence": str(Path(e.sequence).relative_to(root)),
             "audio": str(Path(e.audio).relative_to(root))}
            for e in manifest.entries
        ],
    }
    if manifest.oracle is not None:
        doc["oracle"] = manifest.oracle
    save_layout(manifest.layout, root / "layout.json")
    path.write_text(json.dumps(doc, indent=1) + "\n")


def load_manifest(path) -> ClipManifest:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"manifest {path} does not exist")
    doc = json.loads(path.read_text())
    root = path.parent
    layout = load_layout(root / doc["layout"]) if doc.get("layout") else default_layout()
    entries = []
    for c in doc.get("clips", []):
        e = ClipEntry(c["clip_id"], c["emotion_label"], root / c["sequence"], root / c["audio"])
        for p in (e.sequence, e.audio):
            if not p.exists():
                raise DatasetError(f"clip {e.clip_id!r}: file {p} does not exist")
        entries.append(e)
    return ClipManifest(entries, layout, float(doc.get("fps", 25.0)), root, doc.get("oracle"))


# synthetic oracle -------------------------------------------------------

@dataclass(frozen=True)
class EmotionArchetype:
    brow_amplitude: float
    blink_rate: float
    mouth_openness: float

    def __post_init__(self):
        if self.blink_rate < 0:
            raise ValidationError("blink rate must be non-negative")
        if not (0 <= self.brow_amplitude <= 1 and 0 <= self.mouth_openness <= 1):
            raise ValidationError("archetype amplitudes must lie in [0, 1]")


DEFAULT_ARCHETYPES = {
    "neutral": EmotionArchetype(0.15, 0.3, 0.1),
    "happy": EmotionArchetype(0.35, 0.4, 0.8),
    "angry": EmotionArchetype(0.8, 0.2, 0.5),
    "sad": EmotionArchetype(0.5, 0.15, 0.0),
}


@dataclass(frozen=True)
class OracleSpec:
    seed: int = 0
    n_clips: int = 8
    frames_per_clip: int = 96
    fps: float = 25.0
    audio_dim: int = 8
    archetypes: dict = field(default_factory=lambda: dict(DEFAULT_ARCHETYPES))
    blink_width: int = 5

    def __post_init__(self):
        if self.n_clips < 1 or self.frames_per_clip < 1 or self.audio_dim < 1:
            raise ValidationError("oracle sizes must be positive")
        arch = {k: v if isinstance(v, EmotionArchetype) else EmotionArchetype(**v)
                for k, v in self.archetypes.items()}
        if not arch:
            raise ValidationError("need at least one emotion archetype")
        object.__setattr__(self, "archetypes", arch)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["archetypes"] = {k: asdict(v) for k, v in self.archetypes.items()}
        return d


@dataclass(frozen=True)
class MouthMap:
    """Ground truth ``mouth = audio @ weights + intercepts[label]``."""

    weights: np.ndarray
    intercepts: dict

    def apply(self, feats: np.ndarray, label: str) -> np.ndarray:
        return feats @ self.weights + self.intercepts[label]

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(),
                "intercepts": {k: v.tolist() for k, v in self.intercepts.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "MouthMap":
        return cls(np.array(d["weights"], dtype=np.float64),
                   {k: np.array(v, dtype=np.float64) for k, v in d["intercepts"].items()})


@dataclass
class OracleClip:
    clip_id: str
    emotion_label: str
    sequence: ExpressionSequence
    audio: AudioFeatureSequence
    blinks: list


def _smooth_unit(rng, n, dim, sigma):
    """Gaussian-smoothed white noise rescaled to unit variance."""
    pad = int(4 * sigma) + 1
    z = gaussian_filter1d(rng.standard_normal((n + 2 * pad, dim)), sigma, axis=0, mode="constant")
    k = np.exp(-0.5 * (np.arange(-4 * sigma, 4 * sigma + 1) / sigma) ** 2)
    k /= k.sum()
    return z[pad:pad + n] / math.sqrt(float((k * k).sum()))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def oracle_mouth_map(spec: OracleSpec, n_mouth: int) -> MouthMap:
    rng = np.random.default_rng([spec.seed, 0x6D6F7574])
    gains = rng.uniform(0.4, 0.7, size=n_mouth)
    weights = rng.dirichlet(np.full(spec.audio_dim, 0.5), size=n_mouth).T * gains
    v = rng.uniform(0.15, 0.3, size=n_mouth)
    intercepts = {label: a.mouth_openness * v for label, a in spec.archetypes.items()}
    return MouthMap(weights, intercepts)


def _blink_curve(n, events, width):
    curve = np.zeros(n)
    half = width / 2.0
    for e in events:
        lo, hi = max(0, int(math.floor(e - half))), min(n, int(math.ceil(e + half)) + 1)
        k = np.arange(lo, hi)
        bump = 0.5 * (1.0 + np.cos(np.pi * np.clip((k - e) / half, -1.0, 1.0)))
        curve[lo:hi] = np.maximum(curve[lo:hi], bump)
    return curve


def oracle_clips(spec: OracleSpec, layout: ChannelLayout | None = None) -> tuple[list, MouthMap]:
    """Generate clips in memory.

    Per clip, with ``t`` in seconds:

    * audio features: unit-variance Gaussian-smoothed noise (sigma 2 frames)
      squashed by ``sigmoid(2 z)`` into (0, 1);
    * mouth channels: the linear :class:`MouthMap` of those features;
    * brows: ``amp * f_j * (0.5 + 0.5 sin(2 pi nu t + phi_j))``, ``nu`` in
      [0.2, 0.5] Hz, ``f_j`` in [0.5, 1];
    * eye blinks: Poisson events at the archetype rate, raised-cosine bumps
      ``blink_width`` frames wide with peak 1;
    * remaining blendshapes: slow smooth processes scaled by the brow amplitude;
    * pose: integrated Gaussian steps (slow random walks).
    """
    layout = layout or default_layout()
    e_dim = layout.expression_dim
    mouth = list(layout.mouth_mask)
    mmap = oracle_mouth_map(spec, len(mouth))
    labels = list(spec.archetypes)
    names = layout.channel_names
    brow = [i for i in range(e_dim) if names[i].startswith("brow")]
    blink = [i for i in range(e_dim) if names[i].startswith("eyeBlink")]
    assigned = set(mouth) | set(brow) | set(blink)
    rest = [i for i in range(e_dim) if i not in assigned]
    n = spec.frames_per_clip
    t = np.arange(n) / spec.fps
    clips = []
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_clips)
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        label = labels[k % len(labels)]
        arch = spec.archetypes[label]
        feats = _sigmoid(2.0 * _smooth_unit(rng, n, spec.audio_dim, 2.0))
        vals = np.zeros((n, layout.dim))
        vals[:, mouth] = mmap.apply(feats, label)
        nu = rng.uniform(0.2, 0.5)
        phase = rng.uniform(0, 2 * np.pi, size=len(brow))
        fac = rng.uniform(0.5, 1.0, size=len(brow))
        vals[:, brow] = arch.brow_amplitude * fac * (0.5 + 0.5 * np.sin(2 * np.pi * nu * t[:, None] + phase))
        n_blinks = rng.poisson(arch.blink_rate * n / spec.fps)
        events = np.sort(rng.uniform(0, n - 1, size=n_blinks))
        curve = _blink_curve(n, events, spec.blink_width)
        vals[:, blink] = curve[:, None]
        if rest:
            vals[:, rest] = (0.05 + 0.25 * arch.brow_amplitude) * _sigmoid(_smooth_unit(rng, n, len(rest), 6.0))
        if layout.pose_dim:
            steps = rng.standard_normal((n, layout.pose_dim)) * np.where(np.arange(layout.pose_dim) < 3, 0.01, 0.002)
            vals[:, e_dim:] = np.cumsum(gaussian_filter1d(steps, 3.0, axis=0), axis=0)
        seq = ExpressionSequence(vals, layout, spec.fps)
        clips.append(OracleClip(f"clip{k:03d}_{label}", label, seq,
                                AudioFeatureSequence(feats, spec.fps), [float(x) for x in events]))
    return clips, mmap


def generate_oracle(spec: OracleSpec, out_dir, layout: ChannelLayout | None = None) -> ClipManifest:
    """Write an oracle dataset under ``out_dir`` and return its manifest."""
    layout = layout or default_layout()
    out = Path(out_dir)
    try:
        (out / "clips").mkdir(parents=True, exist_ok=True)
        (out / "audio").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot write oracle dataset to {out}: {exc}") from None
    clips, mmap = oracle_clips(spec, layout)
    entries = []
    for c in clips:
        seq_path = out / "clips" / f"{c.clip_id}.csv"
        audio_path = out / "audio" / f"{c.clip_id}.feat"
        save_sequence(c.sequence, seq_path)
        write_features(audio_path, c.audio.feats)
        entries.append(ClipEntry(c.clip_id, c.emotion_label, seq_path, audio_path))
    (out / "mouth_map.json").write_text(json.dumps(mmap.to_dict()) + "\n")
    oracle_meta = {"spec": spec.to_dict(), "mouth_map": "mouth_map.json",
                   "mouth_channels": [layout.channel_names[i] for i in layout.mouth_mask],
                   "blinks": {c.clip_id: c.blinks for c in clips}}
    manifest = ClipManifest(entries, layout, spec.fps, out, oracle_meta)
    save_manifest(manifest, out / "manifest.json")
    return manifest


def load_mouth_map(manifest: ClipManifest) -> MouthMap:
    if not manifest.oracle:
        raise DatasetError("manifest has no oracle ground truth")
    return MouthMap.from_dict(json.loads((manifest.root / manifest.oracle["mouth_map"]).read_text()))


# windows and chunks -----------------------------------------------------

def sliding_windows(seq: ExpressionSequence, audio, window: int, stride: int = 1) -> list:
    """``(audio window, mouth target window)`` pairs at offsets 0, stride, 2*stride, ..."""
    feats = np.asarray(getattr(audio, "feats", audio))
    n = len(seq)
    if feats.shape[0] != n:
        raise DatasetError(f"sequence has {n} frames but audio has {feats.shape[0]}")
    if window > n:
        raise DatasetError(f"window {window} is longer than the {n}-frame sequence")
    if window < 1 or stride < 1:
        raise ValidationError("window and stride must be positive")
    mouth = seq.values[:, list(seq.layout.mouth_mask)]
    return [(feats[s:s + window].copy(), mouth[s:s + window].copy())
            for s in range(0, n - window + 1, stride)]


@dataclass
class TrainingChunk:
    x0: np.ndarray
    audio: np.ndarray
    clip_values: np.ndarray
    clip_id: str = ""

    @property
    def initial(self) -> np.ndarray:
        return self.x0[0]


def chunk_clips(clips, n: int) -> list:
    """Cut ``(clip_id, sequence, audio)`` triples into length-``n`` chunks at stride ``n``."""
    chunks = []
    for clip_id, seq, audio in clips:
        feats = np.asarray(getattr(audio, "feats", audio))
        if len(seq) < n:
            warnings.warn(f"clip {clip_id!r} has {len(seq)} frames < chunk length {n}; skipped")
            continue
        for s in range(0, len(seq) - n + 1, n):
            chunks.append(TrainingChunk(seq.values[s:s + n].copy(), feats[s:s + n].copy(),
                                        seq.values, clip_id))
    return chunks


def chunk_dataset(manifest: ClipManifest, n: int) -> list:
    """Training chunks for every clip in the manifest; style frames are drawn later per epoch."""
    if not manifest.entries:
        raise DatasetError("manifest has no clips")
    clips = []
    for e in manifest.entries:
        seq, audio, _ = manifest.load_clip(e.clip_id)
        clips.append((e.clip_id, seq, audio))
    chunks = chunk_clips(clips, n)
    if not chunks:
        raise DatasetError(f"no clip is at least {n} frames long")
    return chunks


def draw_styles(chunks, rng: np.random.Generator) -> np.ndarray:
    """Three distinct frame indices per chunk, drawn from the chunk's own clip."""
    return np.stack([rng.choice(len(ch.clip_values), size=3, replace=False) for ch in chunks])
