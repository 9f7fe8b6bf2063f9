"""Visually grounded reranking of ASR alternatives.

Each alternative is scored against the image by a small regression head:
projected image and text features are multiplied element-wise, passed through
a fully connected layer and a single sigmoid output. Training targets are
unit-normalized CIDEr scores of each alternative against the ground truth.

Text features are the mean of pretrained word embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import paramio
from .asr import Alternative, NBestList
from .dataset import FeatureVector, Manifest, load_feature_vector
from .errors import DimensionError, ValidationError
from .optim import TrainingRun, minibatch_gd
from .textmetrics import IdfTable, cider, normalize_unit, tokenize

PARAMS_KIND = "fusion_scorer"


# --- word embeddings ----------------------------------------------------------


class EmbeddingTable(dict):
    """word -> vector mapping with a uniform dimension."""

    @property
    def dim(self) -> int:
        return next(iter(self.values())).size if self else 0


def load_embedding_table(path) -> EmbeddingTable:
    table = EmbeddingTable()
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            word, sep, rest = line.partition("\t")
            if not sep or not word:
                raise ValidationError(f"{path}:{lineno}: expected 'word<TAB>v1 v2 ...'")
            try:
                vec = np.array([float(v) for v in rest.split()], dtype=np.float64)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            if vec.size == 0 or not np.all(np.isfinite(vec)):
                raise ValidationError(f"{path}:{lineno}: empty or non-finite vector")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValidationError(f"{path}:{lineno}: dimension {vec.size}, expected {dim}")
            table[word] = vec
    if not table:
        raise ValidationError(f"{path}: embedding table is empty")
    return table


def save_embedding_table(table, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in table.items():
            fh.write(word + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")


def encode_text(text: str, table: EmbeddingTable) -> np.ndarray:
    vecs = [table[t] for t in tokenize(text) if t in table]
    if not vecs:
        return np.zeros(table.dim)
    return np.mean(vecs, axis=0)


# --- fusion scorer ------------------------------------------------------------


@dataclass
class FusionScorerParams:
    W_img: np.ndarray
    b_img: np.ndarray
    W_txt: np.ndarray
    b_txt: np.ndarray
    W_fc: np.ndarray
    b_fc: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray  # shape ()

    def __post_init__(self):
        d_h = self.W_img.shape[0]
        d_f = self.W_fc.shape[0]
        ok = (
            self.W_img.ndim == 2
            and self.W_txt.ndim == 2
            and self.W_txt.shape[0] == d_h
            and self.b_img.shape == (d_h,)
            and self.b_txt.shape == (d_h,)
            and self.W_fc.shape == (d_f, d_h)
            and self.b_fc.shape == (d_f,)
            and self.w_out.shape == (d_f,)
            and np.shape(self.b_out) == ()
        )
        if not ok:
            raise DimensionError("inconsistent fusion scorer parameter shapes")
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"fusion scorer parameter {name} has non-finite entries")

    @property
    def d_img(self):
        return self.W_img.shape[1]

    @property
    def d_txt(self):
        return self.W_txt.shape[1]

    def arrays(self) -> dict:
        return {k: np.asarray(v) for k, v in vars(self).items()}

    @classmethod
    def zeros(cls, d_img, d_txt, d_h=256, d_f=128):
        return cls(
            np.zeros((d_h, d_img)), np.zeros(d_h), np.zeros((d_h, d_txt)), np.zeros(d_h),
            np.zeros((d_f, d_h)), np.zeros(d_f), np.zeros(d_f), np.zeros(()),
        )

    @classmethod
    def random(cls, d_img, d_txt, d_h=256, d_f=128, seed=0, scale=0.05):
        rng = np.random.default_rng(seed)
        shapes = cls.zeros(d_img, d_txt, d_h, d_f).arrays()
        return cls(**{k: rng.uniform(-scale, scale, size=v.shape) for k, v in shapes.items()})

    def save(self, path) -> None:
        paramio.save(path, PARAMS_KIND, self.arrays())

    @classmethod
    def load(cls, path) -> "FusionScorerParams":
        return cls(**paramio.load(path, PARAMS_KIND))


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward(p: FusionScorerParams, X_img, X_txt):
    a1 = X_img @ p.W_img.T + p.b_img
    a2 = X_txt @ p.W_txt.T + p.b_txt
    r1, r2 = _relu(a1), _relu(a2)
    h = r1 * r2
    a3 = h @ p.W_fc.T + p.b_fc
    f = _relu(a3)
    s = _sigmoid(f @ p.w_out + p.b_out)
    return s, (a1, a2, r1, r2, h, a3, f)


def _check_dims(p: FusionScorerParams, X_img, X_txt):
    if X_img.shape[-1] != p.d_img:
        raise DimensionError(f"image feature dim {X_img.shape[-1]} != scorer input {p.d_img}")
    if X_txt.shape[-1] != p.d_txt:
        raise DimensionError(f"text embedding dim {X_txt.shape[-1]} != scorer input {p.d_txt}")


def score_batch(X_img, X_txt, params: FusionScorerParams) -> np.ndarray:
    X_img = np.atleast_2d(np.asarray(X_img, dtype=np.float64))
    X_txt = np.atleast_2d(np.asarray(X_txt, dtype=np.float64))
    _check_dims(params, X_img, X_txt)
    return _forward(params, X_img, X_txt)[0]


def score_pair(img, txt, params: FusionScorerParams) -> float:
    img = img.values if isinstance(img, FeatureVector) else img
    return float(score_batch(img, txt, params)[0])


def fusion_loss_and_grads(p, X_img, X_txt, y):
    """Mean squared error of the scorer and its gradient for every parameter."""
    s, (a1, a2, r1, r2, h, a3, f) = _forward(p, X_img, X_txt)
    n = y.shape[0]
    diff = s - y
    loss = float(np.mean(diff**2))
    dz = (2.0 / n) * diff * s * (1.0 - s)
    g = {"w_out": f.T @ dz, "b_out": np.asarray(dz.sum())}
    da3 = np.outer(dz, p.w_out) * (a3 > 0)
    g["W_fc"] = da3.T @ h
    g["b_fc"] = da3.sum(axis=0)
    dh = da3 @ p.W_fc
    da1 = dh * r2 * (a1 > 0)
    da2 = dh * r1 * (a2 > 0)
    g["W_img"] = da1.T @ X_img
    g["b_img"] = da1.sum(axis=0)
    g["W_txt"] = da2.T @ X_txt
    g["b_txt"] = da2.sum(axis=0)
    return loss, g


# --- training -----------------------------------------------------------------


@dataclass(frozen=True)
class RerankTrainingExample:
    image_feature: FeatureVector
    alternative_text: str
    target: float

    def __post_init__(self):
        if not 0.0 <= self.target <= 1.0:
            raise ValueError(f"target must be in [0, 1], got {self.target}")


@dataclass(frozen=True)
class RerankerConfig:
    lr: float = 0.01
    epochs: int = 50
    batch: int = 32
    seed: int = 0
    d_h: int = 256
    d_f: int = 128


def expression_key(image_id: str, object_index: int, expression_index: int) -> str:
    return f"{image_id}/{object_index}/{expression_index}"


def build_cider_targets(
    manifest: Manifest, nbest_per_expression: dict, idf: IdfTable, feature_dim: int
) -> list[RerankTrainingExample]:
    """One example per (expression, alternative), keyed by :func:`expression_key`."""
    examples = []
    features = {}
    for rec, oi, ei, expr in manifest.iter_expressions():
        key = expression_key(rec.image_id, oi, ei)
        if key not in nbest_per_expression:
            raise ValidationError(f"no N-best list for expression {key}")
        if rec.image_id not in features:
            features[rec.image_id] = load_feature_vector(manifest.resolve(rec.feature_path), feature_dim)
        truth = tokenize(expr.text)
        for alt in nbest_per_expression[key].alternatives:
            toks = tokenize(alt.text)
            target = normalize_unit(cider(toks, [truth], idf)) if toks else 0.0
            examples.append(RerankTrainingExample(features[rec.image_id], alt.text, target))
    return examples


def train_reranker(examples, embedding_table: EmbeddingTable, config: RerankerConfig = RerankerConfig()) -> TrainingRun:
    if not examples:
        raise ValidationError("train_reranker needs at least one example")
    X_img = np.stack([e.image_feature.values for e in examples])
    X_txt = np.stack([encode_text(e.alternative_text, embedding_table) for e in examples])
    y = np.array([e.target for e in examples])
    params = FusionScorerParams.random(
        X_img.shape[1], X_txt.shape[1], config.d_h, config.d_f, seed=config.seed
    )
    weights = params.arrays()

    def loss_and_grads(w, idx):
        p = SimpleNamespace(**w)
        if idx is None:
            return fusion_loss_and_grads(p, X_img, X_txt, y)
        return fusion_loss_and_grads(p, X_img[idx], X_txt[idx], y[idx])

    rng = np.random.default_rng(config.seed + 1)
    losses = minibatch_gd(
        weights, loss_and_grads, len(examples), lr=config.lr, epochs=config.epochs, batch=config.batch, rng=rng
    )
    return TrainingRun(FusionScorerParams(**weights), losses)


def rerank(nbest: NBestList, img, params: FusionScorerParams, embedding_table: EmbeddingTable) -> NBestList:
    """Sort alternatives by visual-context score; ties keep the recognizer's order."""
    img = img.values if isinstance(img, FeatureVector) else np.asarray(img)
    X_txt = np.stack([encode_text(a.text, embedding_table) for a in nbest.alternatives])
    X_img = np.broadcast_to(img, (len(nbest.alternatives), img.size))
    scores = score_batch(X_img, X_txt, params)
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    alts = tuple(Alternative(nbest.alternatives[i].text, float(scores[i])) for i in order)
    return NBestList(nbest.utterance_id, alts)


def load_reranker(path) -> FusionScorerParams:
    return FusionScorerParams.load(Path(path))
