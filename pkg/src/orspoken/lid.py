"""Language-grounded instance detection: pick the referred box among proposals.

Each candidate is described by its box feature, an 8-d layout vector and the
whole-image context feature. The scorer fuses these additively with the
expression embedding::

    score_i = v_out . relu(W_v [box_i; spatial_i; ctx] + W_t text + b)

and is trained with a softmax over each object's candidates, the label being
the candidate with the highest IoU (> 0.5) against the annotated box.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import paramio
from .dataset import (
    BoundingBox,
    DetectionCandidate,
    Manifest,
    ProposalSet,
    iou,
    load_feature_vector,
)
from .errors import DimensionError, ValidationError
from .optim import TrainingRun, minibatch_gd
from .vgsr import EmbeddingTable, encode_text

PARAMS_KIND = "instance_scorer"
SPATIAL_DIM = 8
POSITIVE_IOU = 0.5


def spatial_features(box: BoundingBox, width: float, height: float) -> np.ndarray:
    """[x_min, y_min, x_max, y_max, x_center, y_center, w, h], normalized by image size."""
    if box.x_max > width or box.y_max > height:
        raise ValidationError(f"box {box.to_list()} lies outside a {width}x{height} image")
    return np.array(
        [
            box.x_min / width,
            box.y_min / height,
            box.x_max / width,
            box.y_max / height,
            (box.x_min + box.x_max) / 2 / width,
            (box.y_min + box.y_max) / 2 / height,
            box.width / width,
            box.height / height,
        ]
    )


@dataclass(frozen=True, eq=False)
class CandidateFeatures:
    box_feature: np.ndarray
    spatial: np.ndarray
    context_feature: np.ndarray

    def visual(self) -> np.ndarray:
        return np.concatenate([self.box_feature, self.spatial, self.context_feature])


@dataclass
class InstanceScorerParams:
    W_v: np.ndarray  # d_h x (d_box + 8 + d_ctx)
    W_t: np.ndarray  # d_h x d_t
    b: np.ndarray  # d_h
    v_out: np.ndarray  # d_h

    def __post_init__(self):
        d_h = self.W_v.shape[0]
        if not (
            self.W_v.ndim == 2
            and self.W_t.ndim == 2
            and self.W_t.shape[0] == d_h
            and self.b.shape == (d_h,)
            and self.v_out.shape == (d_h,)
        ):
            raise DimensionError("inconsistent instance scorer parameter shapes")
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"instance scorer parameter {name} has non-finite entries")

    def arrays(self) -> dict:
        return {k: np.asarray(v) for k, v in vars(self).items()}

    @property
    def d_visual(self):
        return self.W_v.shape[1]

    @property
    def d_txt(self):
        return self.W_t.shape[1]

    @classmethod
    def random(cls, d_visual, d_txt, d_h=64, seed=0, scale=0.05):
        rng = np.random.default_rng(seed)
        return cls(
            W_v=rng.uniform(-scale, scale, (d_h, d_visual)),
            W_t=rng.uniform(-scale, scale, (d_h, d_txt)),
            b=rng.uniform(-scale, scale, d_h),
            v_out=rng.uniform(-scale, scale, d_h),
        )

    def save(self, path) -> None:
        paramio.save(path, PARAMS_KIND, self.arrays())

    @classmethod
    def load(cls, path) -> "InstanceScorerParams":
        return cls(**paramio.load(path, PARAMS_KIND))


def _scores(p, V: np.ndarray, t: np.ndarray):
    a = V @ p.W_v.T + (p.W_t @ t + p.b)
    return np.maximum(a, 0.0) @ p.v_out, a


def score_candidates(expression: str, candidates, params: InstanceScorerParams, embedding_table) -> np.ndarray:
    if not candidates:
        raise ValidationError("no candidates to score")
    V = np.stack([c.visual() for c in candidates])
    t = encode_text(expression, embedding_table)
    if V.shape[1] != params.d_visual:
        raise DimensionError(f"visual feature dim {V.shape[1]} != scorer input {params.d_visual}")
    if t.size != params.d_txt:
        raise DimensionError(f"text embedding dim {t.size} != scorer input {params.d_txt}")
    return _scores(params, V, t)[0]


def candidate_loss_and_grads(p, items):
    """Mean softmax cross-entropy over candidate sets, with gradients.

    ``items`` is a sequence of ``(V, t, positive_index)``.
    """
    g = {
        "W_v": np.zeros_like(p.W_v),
        "W_t": np.zeros_like(p.W_t),
        "b": np.zeros_like(p.b),
        "v_out": np.zeros_like(p.v_out),
    }
    total = 0.0
    n = len(items)
    for V, t, pos in items:
        s, a = _scores(p, V, t)
        z = s - s.max()
        logsum = np.log(np.exp(z).sum())
        total += logsum - z[pos]
        ds = np.exp(z - logsum)
        ds[pos] -= 1.0
        ds /= n
        r = np.maximum(a, 0.0)
        g["v_out"] += r.T @ ds
        da = np.outer(ds, p.v_out) * (a > 0)
        g["W_v"] += da.T @ V
        col = da.sum(axis=0)
        g["W_t"] += np.outer(col, t)
        g["b"] += col
    return total / n, g


@dataclass(frozen=True)
class ScorerConfig:
    lr: float = 0.1
    epochs: int = 200
    batch: int = 32
    seed: int = 0
    d_h: int = 64


@dataclass
class InstanceTrainingItem:
    expression: str
    candidates: list  # CandidateFeatures
    positive: int


def train_on_items(items, embedding_table: EmbeddingTable, config: ScorerConfig = ScorerConfig()) -> TrainingRun:
    if not items:
        raise ValidationError("no trainable objects")
    encoded = [
        (np.stack([c.visual() for c in it.candidates]), encode_text(it.expression, embedding_table), it.positive)
        for it in items
    ]
    d_visual = encoded[0][0].shape[1]
    params = InstanceScorerParams.random(d_visual, embedding_table.dim, config.d_h, seed=config.seed)
    weights = params.arrays()

    def loss_and_grads(w, idx):
        p = SimpleNamespace(**w)
        batch = encoded if idx is None else [encoded[i] for i in idx]
        return candidate_loss_and_grads(p, batch)

    losses = minibatch_gd(
        weights,
        loss_and_grads,
        len(encoded),
        lr=config.lr,
        epochs=config.epochs,
        batch=config.batch,
        rng=np.random.default_rng(config.seed + 1),
    )
    return TrainingRun(InstanceScorerParams(**weights), losses)


class FeatureStore:
    """Loads and caches image/box feature vectors of a manifest."""

    def __init__(self, manifest: Manifest, box_dim: int, context_dim: int):
        self.manifest = manifest
        self.box_dim = box_dim
        self.context_dim = context_dim
        self._cache = {}

    def _load(self, rel_path, dim):
        key = (rel_path, dim)
        if key not in self._cache:
            self._cache[key] = load_feature_vector(self.manifest.resolve(rel_path), dim).values
        return self._cache[key]

    def candidate_features(self, record, candidate: DetectionCandidate) -> CandidateFeatures:
        if candidate.feature_path is None:
            raise ValidationError(
                f"candidate {candidate.box.to_list()} in {record.image_id} has no feature_path"
            )
        return CandidateFeatures(
            box_feature=self._load(candidate.feature_path, self.box_dim),
            spatial=spatial_features(candidate.box, record.width, record.height),
            context_feature=self._load(record.feature_path, self.context_dim),
        )


def positive_index(candidates, gt_box: BoundingBox) -> int | None:
    """Index of the max-IoU candidate if that IoU exceeds 0.5."""
    overlaps = [iou(c.box, gt_box) for c in candidates]
    best = int(np.argmax(overlaps))
    return best if overlaps[best] > POSITIVE_IOU else None


def build_training_items(manifest: Manifest, detections: dict, store: FeatureStore, max_candidates: int | None = None):
    """Training items for every expression of every object; returns ``(items, skipped)``."""
    items = []
    skipped = 0
    for rec in manifest.records:
        ps = detections.get(rec.image_id)
        cands = list(ps.candidates[:max_candidates]) if ps is not None else []
        for obj in rec.objects:
            pos = positive_index(cands, obj.box) if len(cands) >= 2 else None
            if pos is None:
                skipped += len(obj.expressions)
                continue
            feats = [store.candidate_features(rec, c) for c in cands]
            for expr in obj.expressions:
                items.append(InstanceTrainingItem(expr.text, feats, pos))
    return items, skipped


def train_instance_scorer(
    manifest: Manifest,
    detections: dict,
    embedding_table: EmbeddingTable,
    store: FeatureStore,
    config: ScorerConfig = ScorerConfig(),
    max_candidates: int | None = None,
) -> TrainingRun:
    items, skipped = build_training_items(manifest, detections, store, max_candidates)
    if not items:
        raise ValidationError(f"no trainable objects ({skipped} skipped without a positive candidate)")
    run = train_on_items(items, embedding_table, config)
    run.skipped = skipped
    return run


def select_referred(
    expression: str,
    proposals: ProposalSet,
    features,
    params: InstanceScorerParams,
    embedding_table,
) -> tuple[DetectionCandidate, np.ndarray]:
    """Highest-scoring candidate; ties go to the higher det_score, then input order."""
    if len(proposals) == 0:
        raise ValidationError(f"empty proposal set for {proposals.image_id}")
    scores = score_candidates(expression, features, params, embedding_table)
    cands = proposals.candidates
    best = min(range(len(cands)), key=lambda i: (-scores[i], -cands[i].det_score, i))
    return cands[best], scores
