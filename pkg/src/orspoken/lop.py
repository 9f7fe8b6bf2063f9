"""Language-grounded object proposals.

An expression classifier predicts the referred object class; detections of
that class are promoted, ranked by ``det_score * relevance``, and the budget is
back-filled from the class-agnostic ranking when too few remain.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import paramio
from .dataset import ProposalSet, iou, rank_by_det_score
from .errors import DimensionError, ValidationError
from .optim import TrainingRun, minibatch_gd
from .vgsr import EmbeddingTable, encode_text

PARAMS_KIND = "expr_classifier"


@dataclass(frozen=True)
class ClassVocabulary:
    classes: tuple[str, ...]

    def __post_init__(self):
        if not self.classes:
            raise ValidationError("class vocabulary is empty")
        if len(set(self.classes)) != len(self.classes):
            raise ValidationError("class vocabulary has duplicate names")
        object.__setattr__(self, "index", {c: i for i, c in enumerate(self.classes)})

    def __len__(self):
        return len(self.classes)

    def id_of(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise ValidationError(f"class {name!r} not in vocabulary") from None


def load_class_vocabulary(path) -> ClassVocabulary:
    lines = Path(path).read_text("utf-8").splitlines()
    return ClassVocabulary(tuple(ln.strip() for ln in lines if ln.strip()))


def save_class_vocabulary(vocab: ClassVocabulary, path) -> None:
    Path(path).write_text("".join(c + "\n" for c in vocab.classes), "utf-8")


@dataclass
class ExprClassifierParams:
    W: np.ndarray  # C x d_t
    b: np.ndarray  # C

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError("inconsistent expression classifier shapes")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValidationError("expression classifier has non-finite parameters")

    def save(self, path) -> None:
        paramio.save(path, PARAMS_KIND, {"W": self.W, "b": self.b})

    @classmethod
    def load(cls, path) -> "ExprClassifierParams":
        return cls(**paramio.load(path, PARAMS_KIND))


@dataclass(frozen=True)
class ClassifierConfig:
    lr: float = 0.5
    epochs: int = 100
    batch: int = 32
    seed: int = 0


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classifier_loss_and_grads(p, X, labels):
    """Mean cross-entropy and its gradients."""
    probs = softmax(X @ p.W.T + p.b)
    n = X.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))
    d = probs.copy()
    d[np.arange(n), labels] -= 1.0
    d /= n
    return loss, {"W": d.T @ X, "b": d.sum(axis=0)}


def _encode_pairs(pairs, vocab, table):
    X = np.stack([encode_text(text, table) for text, _ in pairs])
    y = np.array([vocab.id_of(label) for _, label in pairs])
    return X, y


def train_expr_classifier(
    pairs,
    vocab: ClassVocabulary,
    embedding_table: EmbeddingTable,
    config: ClassifierConfig = ClassifierConfig(),
    validation=None,
) -> TrainingRun:
    """Multinomial logistic regression from (expression, class) pairs.

    The returned run carries ``val_accuracy`` when ``validation`` pairs are given.
    """
    if not pairs:
        raise ValidationError("train_expr_classifier needs at least one pair")
    X, y = _encode_pairs(pairs, vocab, embedding_table)
    missing = set(range(len(vocab))) - set(y.tolist())
    if missing:
        names = sorted(vocab.classes[i] for i in missing)
        raise ValidationError(f"no training expressions for classes {names}")
    weights = {"W": np.zeros((len(vocab), X.shape[1])), "b": np.zeros(len(vocab))}

    def loss_and_grads(w, idx):
        p = SimpleNamespace(**w)
        if idx is None:
            return classifier_loss_and_grads(p, X, y)
        return classifier_loss_and_grads(p, X[idx], y[idx])

    losses = minibatch_gd(
        weights,
        loss_and_grads,
        len(pairs),
        lr=config.lr,
        epochs=config.epochs,
        batch=config.batch,
        rng=np.random.default_rng(config.seed),
    )
    run = TrainingRun(ExprClassifierParams(**weights), losses)
    if validation:
        run.val_accuracy = classifier_accuracy(validation, run.params, vocab, embedding_table)
    return run


def class_distribution(expression: str, params: ExprClassifierParams, embedding_table) -> np.ndarray:
    x = encode_text(expression, embedding_table)
    if x.size != params.W.shape[1]:
        raise DimensionError(f"text embedding dim {x.size} != classifier input {params.W.shape[1]}")
    return softmax(params.W @ x + params.b)


def predict_class(expression: str, params: ExprClassifierParams, vocab: ClassVocabulary, embedding_table):
    """Most probable class, its probability, and the full distribution."""
    dist = class_distribution(expression, params, embedding_table)
    best = int(np.argmax(dist))  # first maximum = lowest class id
    return vocab.classes[best], float(dist[best]), dist


def classifier_accuracy(pairs, params, vocab, embedding_table) -> float:
    hits = sum(predict_class(text, params, vocab, embedding_table)[0] == label for text, label in pairs)
    return hits / len(pairs)


def filter_rank_proposals(proposals: ProposalSet, predicted: str, relevance: float, k: int) -> ProposalSet:
    if k < 1:
        raise ValidationError(f"proposal budget must be >= 1, got {k}")
    relevant = [c for c in proposals.candidates if c.class_label == predicted]
    selected = sorted(relevant, key=lambda c: -(c.det_score * relevance))[:k]
    if len(selected) < k:
        chosen = set(map(id, selected))
        for c in rank_by_det_score(proposals.candidates):
            if len(selected) == k:
                break
            if id(c) not in chosen:
                selected.append(c)
    return ProposalSet(proposals.image_id, tuple(selected))


def top_k_by_det_score(proposals: ProposalSet, k: int) -> ProposalSet:
    """Class-agnostic baseline ranking."""
    if k < 1:
        raise ValidationError(f"proposal budget must be >= 1, got {k}")
    return ProposalSet(proposals.image_id, tuple(rank_by_det_score(proposals.candidates)[:k]))


def recall_at(proposals, ground_truth, iou_threshold: float, k: int) -> float:
    """Fraction of ground-truth boxes hit by one of the top-``k`` proposals.

    ``proposals`` maps a key (an image id, or a per-object key when the
    ranking depends on the expression) to a ranked :class:`ProposalSet`;
    ``ground_truth`` is a list of ``(key, BoundingBox)``. A key with no
    proposals counts as a miss. A hit needs IoU >= ``iou_threshold``.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValidationError(f"IoU threshold must be in (0, 1], got {iou_threshold}")
    if k < 1:
        raise ValidationError(f"proposal budget must be >= 1, got {k}")
    if not ground_truth:
        raise ValidationError("recall needs at least one ground-truth object")
    hits = 0
    for key, gt in ground_truth:
        ps = proposals.get(key)
        if ps is None:
            continue
        if any(iou(c.box, gt) >= iou_threshold for c in ps.candidates[:k]):
            hits += 1
    return hits / len(ground_truth)

