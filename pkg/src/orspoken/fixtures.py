"""Deterministic synthetic data: the bundled mini dataset and learnability fixtures.

``python -m orspoken.fixtures OUT_DIR`` regenerates the mini dataset that ships
in ``orspoken/data/mini``.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .asr import default_lexicon
from .dataset import (
    BoundingBox,
    DetectionCandidate,
    ImageRecord,
    Manifest,
    ObjectAnnotation,
    ProposalSet,
    ReferringExpression,
    iou,
    load_detections,
    load_manifest,
    save_detections,
    save_feature_vector,
    save_manifest,
)
from .lid import CandidateFeatures, InstanceTrainingItem, spatial_features
from .lop import ClassVocabulary, save_class_vocabulary
from .vgsr import EmbeddingTable, save_embedding_table

MINI_CLASSES = ("window", "car", "person", "dog", "chair", "bottle", "laptop")
MINI_COLORS = ("red", "blue", "green", "white", "black", "big", "small")
FILLER = ("the", "on", "left", "right", "middle", "a", "of", "near")
FEATURE_DIM = 64
EMBED_DIM = 32
IMAGE_W, IMAGE_H = 640.0, 480.0


def mini_dataset_dir() -> Path:
    return Path(str(resources.files("orspoken").joinpath("data/mini")))


def random_embeddings(words, dim: int, seed: int, norm: float = 3.0) -> EmbeddingTable:
    """Independent Gaussian vectors of expected length ``norm``, in sorted word order."""
    rng = np.random.default_rng(seed)
    table = EmbeddingTable()
    for w in sorted(set(words)):
        table[w] = rng.normal(0.0, norm / np.sqrt(dim), dim)
    return table


def lexicon_words(lexicon) -> set:
    words = set(lexicon)
    for wrongs in lexicon.values():
        words.update(wrongs)
    return words


def _position_word(box: BoundingBox) -> str:
    cx = (box.x_min + box.x_max) / 2 / IMAGE_W
    if cx < 0.4:
        return "left"
    if cx > 0.6:
        return "right"
    return "middle"


def _jitter(box: BoundingBox, rng, scale: float) -> BoundingBox:
    w, h = box.width, box.height
    d = rng.uniform(-scale, scale, 4) * np.array([w, h, w, h])
    x0 = float(np.clip(box.x_min + d[0], 0, IMAGE_W - 2))
    y0 = float(np.clip(box.y_min + d[1], 0, IMAGE_H - 2))
    x1 = float(np.clip(box.x_max + d[2], x0 + 1, IMAGE_W))
    y1 = float(np.clip(box.y_max + d[3], y0 + 1, IMAGE_H))
    return BoundingBox(round(x0, 2), round(y0, 2), round(x1, 2), round(y1, 2))


def _object_feature(cls_id, color_id, rng, noise=0.5, signal=5.0):
    v = rng.normal(0.0, noise, FEATURE_DIM)
    v[cls_id] += signal
    v[len(MINI_CLASSES) + color_id] += signal
    return v


def build_mini_dataset(out_dir, seed: int = 7, n_images: int = 5, objects_per_image: int = 4) -> Manifest:
    """Write manifest, detections, features, embeddings and class list to ``out_dir``."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    detections = {}
    col_w = IMAGE_W / objects_per_image
    # every class appears at least once so the classifier has labels for all of them
    n_obj = n_images * objects_per_image
    class_ids = rng.permutation(
        np.concatenate([np.arange(len(MINI_CLASSES)), rng.integers(len(MINI_CLASSES), size=max(0, n_obj - len(MINI_CLASSES)))])
    )[:n_obj]
    for i in range(n_images):
        image_id = f"img{i:03d}"
        objects = []
        cands = []
        ctx = rng.normal(0.0, 0.5, FEATURE_DIM)
        for j in range(objects_per_image):
            cls_id = int(class_ids[i * objects_per_image + j])
            color_id = int(rng.integers(len(MINI_COLORS)))
            x0 = j * col_w + rng.uniform(5, 30)
            x1 = (j + 1) * col_w - rng.uniform(5, 30)
            y0 = rng.uniform(20, 200)
            y1 = y0 + rng.uniform(80, 250)
            box = BoundingBox(round(x0, 2), round(y0, 2), round(x1, 2), round(min(y1, IMAGE_H), 2))
            cls, color = MINI_CLASSES[cls_id], MINI_COLORS[color_id]
            text = f"the {color} {cls} on the {_position_word(box)}"
            objects.append(ObjectAnnotation(box, cls, (ReferringExpression(text),)))
            ctx[cls_id] += 2.5
            feat = _object_feature(cls_id, color_id, rng)
            # a tight detection of the object, and a loose one that may be mislabeled
            good = _jitter(box, rng, 0.05)
            loose = _jitter(box, rng, 0.35)
            loose_cls = cls if rng.random() < 0.5 else MINI_CLASSES[int(rng.integers(len(MINI_CLASSES)))]
            for kind, b, label, score in (
                ("t", good, cls, rng.uniform(0.5, 1.0)),
                ("l", loose, loose_cls, rng.uniform(0.2, 0.8)),
            ):
                name = f"features/{image_id}_{j}{kind}.f32"
                save_feature_vector(feat + rng.normal(0.0, 0.25, FEATURE_DIM), out / name)
                cands.append(DetectionCandidate(b, label, round(float(score), 4), name))
        for j in range(6):
            x0, y0 = rng.uniform(0, IMAGE_W - 120), rng.uniform(0, IMAGE_H - 120)
            b = BoundingBox(round(x0, 2), round(y0, 2), round(x0 + rng.uniform(40, 120), 2),
                            round(y0 + rng.uniform(40, 120), 2))
            name = f"features/{image_id}_bg{j}.f32"
            save_feature_vector(rng.normal(0.0, 0.5, FEATURE_DIM), out / name)
            label = MINI_CLASSES[int(rng.integers(len(MINI_CLASSES)))]
            cands.append(DetectionCandidate(b, label, round(float(rng.uniform(0.0, 0.6)), 4), name))
        feature_path = f"features/{image_id}.f32"
        save_feature_vector(ctx, out / feature_path)
        records.append(ImageRecord(image_id, IMAGE_W, IMAGE_H, feature_path, tuple(objects)))
        detections[image_id] = ProposalSet(image_id, tuple(cands))
    manifest = Manifest(records, base_dir=out)
    save_manifest(manifest, out / "manifest.jsonl")
    save_detections(detections, out / "detections.jsonl")
    words = set(MINI_CLASSES) | set(MINI_COLORS) | set(FILLER) | lexicon_words(default_lexicon())
    save_embedding_table(random_embeddings(words, EMBED_DIM, seed), out / "embeddings.txt")
    save_class_vocabulary(ClassVocabulary(MINI_CLASSES), out / "classes.txt")
    return manifest


# --- larger in-memory expression corpora -----------------------------------------


def synthetic_expressions(n: int, seed: int) -> list[str]:
    """``n`` template expressions over the mini vocabulary."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        color = MINI_COLORS[int(rng.integers(len(MINI_COLORS)))]
        cls = MINI_CLASSES[int(rng.integers(len(MINI_CLASSES)))]
        pos = ("left", "right", "middle")[int(rng.integers(3))]
        out.append(f"the {color} {cls} on the {pos}")
    return out


# --- correlated reranking fixture ----------------------------------------------------

RERANK_CLASSES = ("cat", "hat", "bat", "mat", "car", "jar", "log", "dog")
RERANK_ADJECTIVES = ("red", "blue", "green", "white", "black", "big", "small", "old")
RERANK_CONFUSIONS = {
    # class words are heard as other class words; only the image can tell them apart
    "cat": ("hat", "bat", "mat"),
    "hat": ("cat", "bat", "mat"),
    "bat": ("cat", "hat", "mat"),
    "mat": ("cat", "hat", "bat"),
    "car": ("jar",),
    "jar": ("car",),
    "dog": ("log",),
    "log": ("dog",),
    "red": ("bed", "read"),
    "blue": ("glue",),
    "green": ("grin",),
    "white": ("wide",),
    "black": ("block",),
    "big": ("pig",),
    "small": ("smell",),
    "old": ("gold",),
    "the": ("a",),
    "near": ("ear",),
    "window": ("widow",),
}


@dataclass
class RerankFixture:
    """Expressions whose image feature encodes the referred class."""

    texts: list
    image_features: np.ndarray  # n x d_img
    embedding_table: EmbeddingTable
    lexicon: dict


def rerank_fixture(n: int, seed: int, noise: float = 0.5, signal: float = 5.0) -> RerankFixture:
    rng = np.random.default_rng(seed)
    d_img = len(RERANK_CLASSES) + 8
    texts, feats = [], []
    for _ in range(n):
        c = int(rng.integers(len(RERANK_CLASSES)))
        adj = RERANK_ADJECTIVES[int(rng.integers(len(RERANK_ADJECTIVES)))]
        texts.append(f"the {adj} {RERANK_CLASSES[c]} near the window")
        f = rng.normal(0.0, noise, d_img)
        f[c] += signal
        feats.append(f)
    words = set(RERANK_CLASSES) | set(RERANK_ADJECTIVES) | {"the", "near", "window"}
    words |= {w for ws in RERANK_CONFUSIONS.values() for w in ws}
    # fixed table seed: vocabulary geometry is part of the fixture, not of the draw
    table = random_embeddings(words, EMBED_DIM, 1234)
    return RerankFixture(texts, np.array(feats), table, dict(RERANK_CONFUSIONS))


@dataclass
class RerankGain:
    baseline_cider: float  # mean CIDEr of the recognizer's rank-1
    reranked_cider: float  # mean CIDEr of the reranker's rank-1
    oracle_cider: float  # mean CIDEr of the best alternative in each list
    losses: list

    @property
    def relative_gain(self) -> float:
        return self.reranked_cider / self.baseline_cider - 1.0


def rerank_gain(seed: int, n_train: int = 400, n_test: int = 300, beta: float = 0.3, config=None) -> RerankGain:
    """Train the reranker on mock N-best lists of the correlated fixture and score held-out lists."""
    from .asr import mock_transcribe
    from .dataset import FeatureVector
    from .textmetrics import build_idf, cider, normalize_unit, tokenize
    from .vgsr import RerankerConfig, RerankTrainingExample, rerank, train_reranker

    if config is None:
        config = RerankerConfig(lr=0.1, epochs=100, seed=seed)
    fx = rerank_fixture(n_train + n_test, seed)
    train, test = range(n_train), range(n_train, n_train + n_test)
    nbest = [mock_transcribe(t, beta, seed * 100_000 + i, fx.lexicon) for i, t in enumerate(fx.texts)]
    truths = [tokenize(t) for t in fx.texts]

    idf = build_idf(truths[i] for i in train)
    examples = [
        RerankTrainingExample(
            FeatureVector(fx.image_features[i]), a.text, normalize_unit(cider(tokenize(a.text), [truths[i]], idf))
        )
        for i in train
        for a in nbest[i].alternatives
    ]
    run = train_reranker(examples, fx.embedding_table, config)

    idf = build_idf(truths[i] for i in test)
    base, ours, best = [], [], []
    for i in test:
        refs = [truths[i]]
        base.append(cider(tokenize(nbest[i].top), refs, idf).value)
        ranked = rerank(nbest[i], fx.image_features[i], run.params, fx.embedding_table)
        ours.append(cider(tokenize(ranked.top), refs, idf).value)
        best.append(max(cider(tokenize(a.text), refs, idf).value for a in nbest[i].alternatives))
    return RerankGain(float(np.mean(base)), float(np.mean(ours)), float(np.mean(best)), run.losses)


# --- proposal dominance fixture ------------------------------------------------------


@dataclass
class ProposalInstance:
    proposals: ProposalSet
    gt_box: BoundingBox
    gt_class: str
    relevance: float


def _random_box(rng, w=200.0, h=200.0) -> BoundingBox:
    x0, y0 = rng.uniform(0, w - 20), rng.uniform(0, h - 20)
    return BoundingBox(float(x0), float(y0), float(x0 + rng.uniform(5, w - x0)), float(y0 + rng.uniform(5, h - y0)))


def proposal_instance(rng, iou_threshold: float = 0.5, n_classes: int = 5, max_candidates: int = 120) -> ProposalInstance:
    """Random proposals where every candidate overlapping the GT at the threshold has the GT class."""
    classes = [f"c{i}" for i in range(n_classes)]
    gt_class = classes[int(rng.integers(n_classes))]
    gt = _random_box(rng)
    n = int(rng.integers(1, max_candidates + 1))
    cands = []
    for _ in range(n):
        if rng.random() < 0.15:
            d = rng.uniform(-0.25, 0.25, 4) * np.array([gt.width, gt.height, gt.width, gt.height])
            x0, y0 = max(0.0, gt.x_min + d[0]), max(0.0, gt.y_min + d[1])
            b = BoundingBox(float(x0), float(y0), float(max(x0 + 1, gt.x_max + d[2])),
                            float(max(y0 + 1, gt.y_max + d[3])))
        else:
            b = _random_box(rng)
        label = classes[int(rng.integers(n_classes))]
        if iou(b, gt) >= iou_threshold:
            label = gt_class
        score = float(rng.choice([rng.uniform(0, 1), round(rng.uniform(0, 1), 1)]))
        cands.append(DetectionCandidate(b, label, score))
    uniq = list({(c.box, c.class_label): c for c in cands}.values())
    ordered = sorted(uniq, key=lambda c: -c.det_score)
    return ProposalInstance(ProposalSet("img", tuple(ordered)), gt, gt_class, float(rng.uniform(0.05, 1.0)))


# --- instance scorer fixtures ----------------------------------------------------------


def spatial_items(n: int, seed: int, table: EmbeddingTable | None = None, d_box: int = 4, d_ctx: int = 4):
    """Two-candidate "left"/"right" items; box and context features are pure noise."""
    rng = np.random.default_rng(seed)
    nouns = ("box", "cup", "lamp", "sign")
    if table is None:
        table = random_embeddings(set(nouns) | {"the", "on", "left", "right"}, 8, 99)
    items = []
    for _ in range(n):
        w, h = rng.uniform(200, 800), rng.uniform(200, 600)
        boxes = []
        for half in (0, 1):
            x0 = rng.uniform(half * w / 2, half * w / 2 + w / 4)
            x1 = rng.uniform(x0 + 5, (half + 1) * w / 2)
            y0 = rng.uniform(0, h / 2)
            boxes.append(BoundingBox(float(x0), float(y0), float(x1), float(rng.uniform(y0 + 5, h))))
        side = int(rng.integers(2))
        order = rng.permutation(2)
        ctx = rng.normal(0, 1, d_ctx)
        feats = [
            CandidateFeatures(rng.normal(0, 1, d_box), spatial_features(boxes[o], w, h), ctx) for o in order
        ]
        noun = nouns[int(rng.integers(len(nouns)))]
        text = f"the {noun} on the {('left', 'right')[side]}"
        items.append(InstanceTrainingItem(text, feats, int(np.where(order == side)[0][0])))
    return items, table


def indicator_items(n: int, seed: int, n_candidates: int = 4, d_box: int = 6, d_ctx: int = 3):
    """Items whose positive candidate alone carries a 1 in box-feature coordinate 0."""
    rng = np.random.default_rng(seed)
    table = random_embeddings({"the", "thing", "one", "object"}, 4, 5)
    items = []
    for _ in range(n):
        pos = int(rng.integers(n_candidates))
        ctx = rng.normal(0, 1, d_ctx)
        feats = []
        for i in range(n_candidates):
            f = rng.normal(0, 0.3, d_box)
            f[0] = 1.0 if i == pos else 0.0
            b = _random_box(rng)
            feats.append(CandidateFeatures(f, spatial_features(b, 200.0, 200.0), ctx))
        items.append(InstanceTrainingItem("the thing", feats, pos))
    return items, table


def separable_pairs(n: int, seed: int):
    """Two-class expressions whose word embeddings are linearly separable."""
    rng = np.random.default_rng(seed)
    dim = 6
    words_a = [f"alpha{i}" for i in range(5)]
    words_b = [f"beta{i}" for i in range(5)]
    table = EmbeddingTable()
    for w in words_a:
        v = rng.normal(0, 0.3, dim)
        v[0] = 1.0
        table[w] = v
    for w in words_b:
        v = rng.normal(0, 0.3, dim)
        v[0] = -1.0
        table[w] = v
    table["the"] = np.zeros(dim)
    pairs = []
    for _ in range(n):
        label = "a" if rng.random() < 0.5 else "b"
        pool = words_a if label == "a" else words_b
        words = ["the"] + list(rng.choice(pool, size=int(rng.integers(1, 4))))
        pairs.append((" ".join(words), label))
    return pairs, table, ClassVocabulary(("a", "b"))


def train_mini_models(directory) -> None:
    """Train the default model set on a mini dataset and store it next to the manifest."""
    from .harness import PipelineConfig, TrainingPlan, save_models, train_all
    from .lop import load_class_vocabulary
    from .vgsr import load_embedding_table

    d = Path(directory)
    manifest = load_manifest(d / "manifest.jsonl")
    models = train_all(
        manifest,
        load_detections(d / "detections.jsonl"),
        load_embedding_table(d / "embeddings.txt"),
        load_class_vocabulary(d / "classes.txt"),
        PipelineConfig(),
        TrainingPlan(),
    )
    save_models(models, d)


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else mini_dataset_dir()
    build_mini_dataset(target)
    train_mini_models(target)
