"""Manifest, feature-file and detection I/O plus timestamped noise alignment.

Manifests and detections are JSON-Lines. Feature files are raw little-endian
float32 vectors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform
from .errors import AudioError, FeatureError, ManifestError
from .textmetrics import tokenize


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        for name, v in zip(("x_min", "y_min", "x_max", "y_max"), coords):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValueError(f"box.{name} must be a number, got {v!r}")
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"box.{name} must be finite and >= 0, got {v!r}")
        if not self.x_min < self.x_max:
            raise ValueError(f"box x_min ({self.x_min}) must be < x_max ({self.x_max})")
        if not self.y_min < self.y_max:
            raise ValueError(f"box y_min ({self.y_min}) must be < y_max ({self.y_max})")

    @classmethod
    def from_list(cls, values) -> "BoundingBox":
        if not isinstance(values, (list, tuple)) or len(values) != 4:
            raise ValueError(f"box must be [x_min, y_min, x_max, y_max], got {values!r}")
        return cls(*values)

    def to_list(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two axis-aligned boxes."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class ReferringExpression:
    text: str
    speech_path: str | None = None
    timestamp_s: float | None = None

    def __post_init__(self):
        if not isinstance(self.text, str) or not tokenize(self.text):
            raise ValueError(f"expression text is empty after tokenization: {self.text!r}")
        if self.timestamp_s is not None and not (
            math.isfinite(self.timestamp_s) and self.timestamp_s >= 0
        ):
            raise ValueError(f"expression timestamp_s must be >= 0, got {self.timestamp_s!r}")


@dataclass(frozen=True)
class ObjectAnnotation:
    box: BoundingBox
    class_label: str
    expressions: tuple[ReferringExpression, ...]

    def __post_init__(self):
        if not isinstance(self.class_label, str) or not self.class_label:
            raise ValueError("object class_label must be a nonempty string")
        if len(self.expressions) < 1:
            raise ValueError("object needs at least one expression")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: float
    height: float
    feature_path: str
    objects: tuple[ObjectAnnotation, ...]

    def __post_init__(self):
        if not isinstance(self.image_id, str) or not self.image_id:
            raise ValueError("image_id must be a nonempty string")
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")


@dataclass
class Manifest:
    records: list[ImageRecord]
    base_dir: Path = field(default=Path("."), compare=False)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.image_id: r for r in self.records}

    def resolve(self, rel_path) -> Path:
        p = Path(rel_path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def n_objects(self) -> int:
        return sum(len(r.objects) for r in self.records)

    def iter_expressions(self):
        """Yield ``(record, object_index, expression_index, expression)`` in file order."""
        for rec in self.records:
            for oi, obj in enumerate(rec.objects):
                for ei, expr in enumerate(obj.expressions):
                    yield rec, oi, ei, expr


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise FeatureError(f"feature vector must be 1-D and nonempty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise FeatureError("feature vector contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class DetectionCandidate:
    box: BoundingBox
    class_label: str
    det_score: float
    feature_path: str | None = None

    def __post_init__(self):
        if not isinstance(self.class_label, str) or not self.class_label:
            raise ValueError("candidate class_label must be a nonempty string")
        s = self.det_score
        if isinstance(s, bool) or not isinstance(s, (int, float)) or not (0.0 <= s <= 1.0):
            raise ValueError(f"det_score must be a finite number in [0, 1], got {s!r}")


@dataclass(frozen=True)
class ProposalSet:
    """Ranked candidate boxes for one image; order is the ranking."""

    image_id: str
    candidates: tuple[DetectionCandidate, ...]

    def __post_init__(self):
        seen = set()
        for c in self.candidates:
            key = (c.box, c.class_label)
            if key in seen:
                raise ValueError(f"duplicate candidate {key} in proposals for {self.image_id}")
            seen.add(key)

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


# --- manifest -----------------------------------------------------------------


def _expression_from_json(d) -> ReferringExpression:
    if isinstance(d, str):
        return ReferringExpression(d)
    return ReferringExpression(
        text=d["text"], speech_path=d.get("speech_path"), timestamp_s=d.get("timestamp_s")
    )


def record_from_json(d: dict) -> ImageRecord:
    objects = []
    for i, o in enumerate(d["objects"]):
        try:
            objects.append(
                ObjectAnnotation(
                    box=BoundingBox.from_list(o["box"]),
                    class_label=o["class_label"],
                    expressions=tuple(_expression_from_json(e) for e in o["expressions"]),
                )
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"objects[{i}]: {_describe(exc)}") from exc
    return ImageRecord(
        image_id=d["image_id"],
        width=d["width"],
        height=d["height"],
        feature_path=d["feature_path"],
        objects=tuple(objects),
    )


def record_to_json(rec: ImageRecord) -> dict:
    objects = []
    for o in rec.objects:
        exprs = []
        for e in o.expressions:
            ed = {"text": e.text}
            if e.speech_path is not None:
                ed["speech_path"] = e.speech_path
            if e.timestamp_s is not None:
                ed["timestamp_s"] = e.timestamp_s
            exprs.append(ed)
        objects.append({"box": o.box.to_list(), "class_label": o.class_label, "expressions": exprs})
    return {
        "image_id": rec.image_id,
        "width": rec.width,
        "height": rec.height,
        "feature_path": rec.feature_path,
        "objects": objects,
    }


def _describe(exc: Exception) -> str:
    if isinstance(exc, KeyError):
        return f"missing field {exc.args[0]!r}"
    return str(exc)


def _iter_json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", line=lineno, path=path) from exc


def load_manifest(path) -> Manifest:
    path = Path(path)
    records = []
    seen = set()
    for lineno, d in _iter_json_lines(path):
        try:
            if not isinstance(d, dict):
                raise ValueError("record must be a JSON object")
            rec = record_from_json(d)
        except (ValueError, KeyError, TypeError) as exc:
            image_id = d.get("image_id") if isinstance(d, dict) else None
            raise ManifestError(
                f"record {image_id!r}: {_describe(exc)}", line=lineno, path=path
            ) from exc
        if rec.image_id in seen:
            raise ManifestError(f"duplicate image_id {rec.image_id!r}", line=lineno, path=path)
        seen.add(rec.image_id)
        records.append(rec)
    return Manifest(records, base_dir=path.parent)


def save_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(record_to_json(rec), sort_keys=True) + "\n")


# --- features -----------------------------------------------------------------


def load_feature_vector(path, expected_dim: int) -> FeatureVector:
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise FeatureError(f"{path}: size {len(raw)} is not a multiple of 4 bytes")
    values = np.frombuffer(raw, dtype="<f4")
    if values.size != expected_dim:
        raise FeatureError(f"{path}: expected dimension {expected_dim}, found {values.size}")
    if not np.all(np.isfinite(values)):
        raise FeatureError(f"{path}: non-finite entry at index {int(np.argmin(np.isfinite(values)))}")
    return FeatureVector(values)


def save_feature_vector(values, path) -> None:
    Path(path).write_bytes(np.asarray(values, dtype="<f4").tobytes())


# --- detections ---------------------------------------------------------------


def candidate_from_json(d: dict) -> DetectionCandidate:
    return DetectionCandidate(
        box=BoundingBox.from_list(d["box"]),
        class_label=d["class_label"],
        det_score=d["det_score"],
        feature_path=d.get("feature_path"),
    )


def candidate_to_json(image_id: str, c: DetectionCandidate) -> dict:
    d = {
        "image_id": image_id,
        "box": c.box.to_list(),
        "class_label": c.class_label,
        "det_score": c.det_score,
    }
    if c.feature_path is not None:
        d["feature_path"] = c.feature_path
    return d


def rank_by_det_score(candidates) -> list[DetectionCandidate]:
    # sorted() is stable, so ties keep their incoming order
    return sorted(candidates, key=lambda c: -c.det_score)


def load_detections(path) -> dict[str, ProposalSet]:
    grouped: dict[str, list[DetectionCandidate]] = {}
    for lineno, d in _iter_json_lines(path):
        try:
            if not isinstance(d, dict):
                raise ValueError("detection must be a JSON object")
            image_id = d["image_id"]
            cand = candidate_from_json(d)
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(_describe(exc), line=lineno, path=path) from exc
        grouped.setdefault(image_id, []).append(cand)
    try:
        return {
            image_id: ProposalSet(image_id, tuple(rank_by_det_score(cands)))
            for image_id, cands in grouped.items()
        }
    except ValueError as exc:
        raise ManifestError(str(exc), path=path) from exc


def save_detections(detections: dict[str, ProposalSet], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, ps in detections.items():
            for c in ps.candidates:
                fh.write(json.dumps(candidate_to_json(image_id, c), sort_keys=True) + "\n")


# --- noise alignment ----------------------------------------------------------


def select_noise_window(noise: Waveform, timestamp_s: float, duration_s: float) -> Waveform:
    """Cut the noise clip aligned to ``timestamp_s``, wrapping past the end."""
    if len(noise) == 0:
        raise AudioError("noise waveform is empty")
    if not timestamp_s >= 0:
        raise AudioError(f"timestamp_s must be >= 0, got {timestamp_s}")
    if not duration_s > 0:
        raise AudioError(f"duration_s must be > 0, got {duration_s}")
    start = int(round(timestamp_s * noise.rate))
    length = int(round(duration_s * noise.rate))
    idx = (start + np.arange(length)) % len(noise)
    return Waveform(noise.samples[idx], noise.rate)
