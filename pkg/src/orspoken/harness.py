"""End-to-end pipeline, evaluation across noise levels and report files.

Modes:

``baseline``  recognizer rank-1 transcription, det_score top-k proposals
``vgsr``      reranked transcription, det_score top-k proposals
``vgsr+lop``  reranked transcription, class-filtered proposals
``text``      ground-truth text, class-filtered proposals (upper bound)
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .asr import AsrAdapter, NBestList, default_lexicon, mock_transcribe, transcribe_nbest
from .audio import (
    DEFAULT_NOISE_LEVELS,
    Waveform,
    check_noise_level,
    decode_wav,
    mix_noise,
    peak_normalize,
    resample_to_16k,
)
from .dataset import BoundingBox, Manifest, iou, load_feature_vector, select_noise_window
from .errors import OrspokenError, ValidationError
from .lid import FeatureStore, InstanceScorerParams, ScorerConfig, select_referred, train_instance_scorer
from .lop import (
    ClassifierConfig,
    ClassVocabulary,
    ExprClassifierParams,
    filter_rank_proposals,
    predict_class,
    recall_at,
    top_k_by_det_score,
    train_expr_classifier,
)
from .textmetrics import METRIC_NAMES, build_idf, score_all, tokenize
from .vgsr import (
    EmbeddingTable,
    FusionScorerParams,
    RerankerConfig,
    build_cider_targets,
    expression_key,
    rerank,
    train_reranker,
)

log = logging.getLogger(__name__)

SPEECH_MODES = ("baseline", "vgsr", "vgsr+lop")
MODES = SPEECH_MODES + ("text",)
CSV_COLUMNS = ("mode", "beta", "meteor", "rouge_l", "cider", "bleu1", "acc_at_1")
TRUE_DETECTION_IOU = 0.5


def acc_at_1(selections, threshold: float = TRUE_DETECTION_IOU) -> float:
    """Share of (predicted box, GT box) pairs with IoU strictly above ``threshold``.

    A ``None`` prediction (failed object) counts as a miss.
    """
    if not selections:
        raise ValidationError("Acc@1 needs at least one selection")
    hits = sum(1 for pred, gt in selections if pred is not None and iou(pred, gt) > threshold)
    return hits / len(selections)


@dataclass
class PipelineConfig:
    beta_levels: tuple = DEFAULT_NOISE_LEVELS
    proposal_budget: int = 10
    iou_threshold: float = TRUE_DETECTION_IOU
    seed: int = 0
    image_feature_dim: int = 64
    box_feature_dim: int = 64
    noise_path: str | None = None
    normalization: str = "peak"
    curve_budgets: tuple = (1, 5, 10, 30, 100)
    curve_ious: tuple = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
    curve_iou_budgets: tuple = (5, 10)
    curve_k_ious: tuple = (0.5, 0.7)

    def __post_init__(self):
        self.beta_levels = tuple(check_noise_level(b) for b in self.beta_levels)
        if self.proposal_budget < 1 or any(k < 1 for k in self.curve_budgets):
            raise ValidationError("proposal budgets must be >= 1")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValidationError("iou_threshold must be in (0, 1]")


@dataclass
class Models:
    embedding_table: EmbeddingTable
    vocab: ClassVocabulary
    reranker: FusionScorerParams
    classifier: ExprClassifierParams
    scorer: InstanceScorerParams
    lexicon: dict = field(default_factory=default_lexicon)


MODEL_FILES = {"reranker": "reranker.orsp", "classifier": "classifier.orsp", "scorer": "scorer.orsp"}


def save_models(models: Models, directory) -> None:
    d = Path(directory)
    models.reranker.save(d / MODEL_FILES["reranker"])
    models.classifier.save(d / MODEL_FILES["classifier"])
    models.scorer.save(d / MODEL_FILES["scorer"])


def have_models(directory) -> bool:
    return all((Path(directory) / name).is_file() for name in MODEL_FILES.values())


def load_models(directory, embedding_table: EmbeddingTable, vocab: ClassVocabulary, lexicon=None) -> Models:
    d = Path(directory)
    return Models(
        embedding_table,
        vocab,
        FusionScorerParams.load(d / MODEL_FILES["reranker"]),
        ExprClassifierParams.load(d / MODEL_FILES["classifier"]),
        InstanceScorerParams.load(d / MODEL_FILES["scorer"]),
        default_lexicon() if lexicon is None else lexicon,
    )


@dataclass
class ObjectResult:
    mode: str
    beta: float
    budget: int
    key: str
    ground_truth: str
    transcription: str | None
    predicted_class: str | None
    predicted_box: list | None
    gt_box: list
    iou: float
    hit: bool
    metrics: dict
    error: str | None = None


def expression_seed(seed: int, key: str) -> int:
    """Per-expression seed, identical across noise levels so corruption is coupled."""
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


class _Context:
    """Per-run caches: features, noise recording, N-best lists, IDF."""

    def __init__(self, manifest, models, config, adapter):
        self.manifest = manifest
        self.models = models
        self.config = config
        self.adapter = adapter
        self.store = FeatureStore(manifest, config.box_feature_dim, config.image_feature_dim)
        self.idf = build_idf(tokenize(e.text) for _, _, _, e in manifest.iter_expressions())
        self._nbest = {}
        self._noise = None

    def image_feature(self, rec):
        return load_feature_vector(self.manifest.resolve(rec.feature_path), self.config.image_feature_dim)

    def noise(self) -> Waveform:
        if self._noise is None:
            if self.config.noise_path is None:
                raise ValidationError("noise recording required for beta > 0 with a real recognizer")
            self._noise = resample_to_16k(decode_wav(self.manifest.resolve(self.config.noise_path)))
        return self._noise

    def nbest(self, key: str, expr, beta: float) -> NBestList:
        cache_key = (key, beta)
        if cache_key not in self._nbest:
            self._nbest[cache_key] = self._recognize(key, expr, beta)
        return self._nbest[cache_key]

    def _recognize(self, key, expr, beta) -> NBestList:
        if self.adapter is None:
            return mock_transcribe(
                expr.text, beta, expression_seed(self.config.seed, key), self.models.lexicon, utterance_id=key
            )
        if expr.speech_path is None:
            raise ValidationError(f"expression {key} has no speech_path")
        speech = resample_to_16k(decode_wav(self.manifest.resolve(expr.speech_path)))
        if beta == 0.0:
            audio = peak_normalize(speech)
        else:
            noise = self.noise()
            if expr.timestamp_s is not None:
                noise = select_noise_window(noise, expr.timestamp_s, speech.duration)
            audio = mix_noise(speech, noise, beta, self.config.normalization)
        return transcribe_nbest(audio, self.adapter, utterance_id=key)


def transcribe_manifest(
    manifest: Manifest, config: PipelineConfig, beta: float, adapter: AsrAdapter | None = None, lexicon=None
) -> dict:
    """N-best list for every expression at one noise level, keyed by expression key."""
    beta = check_noise_level(beta)
    models = Models(None, None, None, None, None, default_lexicon() if lexicon is None else lexicon)
    ctx = _Context(manifest, models, config, adapter)
    return {
        expression_key(rec.image_id, oi, ei): ctx.nbest(expression_key(rec.image_id, oi, ei), expr, beta)
        for rec, oi, ei, expr in manifest.iter_expressions()
    }


def _process(ctx: _Context, mode, beta, budget, rec, oi, ei, expr, detections) -> ObjectResult:
    models = ctx.models
    obj = rec.objects[oi]
    key = expression_key(rec.image_id, oi, ei)
    result = ObjectResult(
        mode=mode, beta=beta, budget=budget, key=key, ground_truth=expr.text, transcription=None,
        predicted_class=None, predicted_box=None, gt_box=obj.box.to_list(), iou=0.0, hit=False,
        metrics={m: 0.0 for m in METRIC_NAMES},
    )
    try:
        if mode == "text":
            text = expr.text
        else:
            nbest = ctx.nbest(key, expr, beta)
            if mode != "baseline":
                nbest = rerank(nbest, ctx.image_feature(rec), models.reranker, models.embedding_table)
            text = nbest.top
        result.transcription = text
        hyp = tokenize(text)
        if hyp:
            scores = score_all(hyp, tokenize(expr.text), ctx.idf)
            result.metrics = {m: scores[m].value for m in METRIC_NAMES}

        ps = detections.get(rec.image_id)
        if ps is None or len(ps) == 0:
            raise ValidationError(f"no detections for image {rec.image_id}")
        if mode in ("vgsr+lop", "text"):
            cls, relevance, _ = predict_class(text, models.classifier, models.vocab, models.embedding_table)
            result.predicted_class = cls
            proposals = filter_rank_proposals(ps, cls, relevance, budget)
        else:
            proposals = top_k_by_det_score(ps, budget)
        feats = [ctx.store.candidate_features(rec, c) for c in proposals.candidates]
        chosen, _ = select_referred(text, proposals, feats, models.scorer, models.embedding_table)
        result.predicted_box = chosen.box.to_list()
        result.iou = iou(chosen.box, obj.box)
        result.hit = result.iou > ctx.config.iou_threshold
    except (OrspokenError, OSError, ValueError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        log.warning("object %s (%s, beta=%s) failed: %s", key, mode, beta, result.error)
    return result


def run_pipeline(
    manifest: Manifest,
    detections: dict,
    models: Models,
    config: PipelineConfig,
    mode: str,
    adapter: AsrAdapter | None = None,
    budget: int | None = None,
    _ctx: _Context | None = None,
) -> list[ObjectResult]:
    """Per-expression results for every noise level, in manifest order.

    ``adapter=None`` uses the offline mock recognizer. The text mode ignores
    noise and runs once at beta 0.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    ctx = _ctx or _Context(manifest, models, config, adapter)
    budget = budget or config.proposal_budget
    betas = (0.0,) if mode == "text" else config.beta_levels
    results = []
    for beta in betas:
        for rec, oi, ei, expr in manifest.iter_expressions():
            results.append(_process(ctx, mode, beta, budget, rec, oi, ei, expr, detections))
    return results


# --- report -------------------------------------------------------------------


@dataclass
class ReportRow:
    mode: str
    beta: float
    meteor: float
    rouge_l: float
    cider: float
    bleu1: float
    acc_at_1: float
    n_objects: int
    n_failures: int


@dataclass
class EvalReport:
    rows: list
    curves: dict = field(default_factory=dict)  # name -> (columns, list of row tuples)
    objects: list = field(default_factory=list)  # ObjectResult dicts

    def __post_init__(self):
        mode_order = {m: i for i, m in enumerate(MODES)}
        self.rows = sorted(self.rows, key=lambda r: (r.beta, mode_order.get(r.mode, len(MODES))))

    def row(self, mode: str, beta: float) -> ReportRow:
        for r in self.rows:
            if r.mode == mode and r.beta == beta:
                return r
        raise KeyError((mode, beta))


def summarize(results: list[ObjectResult]) -> list[ReportRow]:
    groups: dict = {}
    for r in results:
        groups.setdefault((r.mode, r.beta), []).append(r)
    rows = []
    for (mode, beta), rs in groups.items():
        means = {m: float(np.mean([r.metrics[m] for r in rs])) for m in METRIC_NAMES}
        selections = [
            (BoundingBox.from_list(r.predicted_box) if r.predicted_box else None, BoundingBox.from_list(r.gt_box))
            for r in rs
        ]
        rows.append(
            ReportRow(
                mode=mode, beta=beta, acc_at_1=acc_at_1(selections), n_objects=len(rs),
                n_failures=sum(r.error is not None for r in rs), **means,
            )
        )
    return rows


def proposal_curves(manifest, detections, models: Models, config: PipelineConfig) -> dict:
    """Recall curves of det_score ranking vs class-filtered ranking (from ground-truth text)."""
    ranked = {"det_score": {}, "lop": {}}
    gt = []
    max_k = max(config.curve_budgets + config.curve_iou_budgets)
    for rec, oi, ei, expr in manifest.iter_expressions():
        key = expression_key(rec.image_id, oi, ei)
        gt.append((key, rec.objects[oi].box))
        ps = detections.get(rec.image_id)
        if ps is None or len(ps) == 0:
            continue
        cls, rel, _ = predict_class(expr.text, models.classifier, models.vocab, models.embedding_table)
        ranked["det_score"][key] = top_k_by_det_score(ps, max_k)
        ranked["lop"][key] = filter_rank_proposals(ps, cls, rel, max_k)
    if not gt:
        return {}
    vs_iou = [
        (method, k, t, recall_at(props, gt, t, k))
        for method, props in ranked.items()
        for k in config.curve_iou_budgets
        for t in config.curve_ious
    ]
    vs_k = [
        (method, t, k, recall_at(props, gt, t, k))
        for method, props in ranked.items()
        for t in config.curve_k_ious
        for k in config.curve_budgets
    ]
    return {
        "recall_vs_iou": (("method", "k", "iou", "recall"), vs_iou),
        "recall_vs_k": (("method", "iou", "k", "recall"), vs_k),
    }


def evaluate(
    manifest: Manifest,
    detections: dict,
    models: Models,
    config: PipelineConfig,
    modes=SPEECH_MODES,
    adapter: AsrAdapter | None = None,
    curves: bool = True,
) -> EvalReport:
    ctx = _Context(manifest, models, config, adapter)
    results = []
    for mode in modes:
        results.extend(run_pipeline(manifest, detections, models, config, mode, adapter, _ctx=ctx))
    report_curves = {}
    if curves:
        report_curves.update(proposal_curves(manifest, detections, models, config))
        acc_rows = []
        for mode in modes:
            for k in config.curve_budgets:
                rs = run_pipeline(manifest, detections, models, config, mode, adapter, budget=k, _ctx=ctx)
                for row in summarize(rs):
                    acc_rows.append((mode, row.beta, k, row.acc_at_1))
        report_curves["acc_vs_k"] = (("mode", "beta", "k", "acc_at_1"), acc_rows)
    return EvalReport(summarize(results), report_curves, [asdict(r) for r in results])


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    """Write results.csv, report.json and one CSV per curve; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    rows = [tuple(getattr(r, c) for c in CSV_COLUMNS) for r in report.rows]
    path = out / "results.csv"
    path.write_text(csv_text(CSV_COLUMNS, rows), "utf-8")
    written.append(path)
    detail = {
        "rows": [asdict(r) for r in report.rows],
        "curves": {name: {"columns": list(cols), "rows": [list(r) for r in data]}
                   for name, (cols, data) in sorted(report.curves.items())},
        "objects": report.objects,
    }
    path = out / "report.json"
    path.write_text(json.dumps(detail, indent=2, sort_keys=True) + "\n", "utf-8")
    written.append(path)
    for name, (cols, data) in sorted(report.curves.items()):
        if not data:
            continue
        path = out / f"{name}.csv"
        path.write_text(csv_text(cols, data), "utf-8")
        written.append(path)
    return written


# --- training all models from a manifest ----------------------------------------


@dataclass
class TrainingPlan:
    # small manifests need a higher step size than the reranker default to move
    # off the near-flat start of the multiplicative head
    reranker: RerankerConfig = field(default_factory=lambda: RerankerConfig(lr=0.1, epochs=30))
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    scorer: ScorerConfig = field(default_factory=lambda: ScorerConfig(lr=0.1, epochs=600))
    reranker_betas: tuple = (0.1, 0.3)
    reranker_draws: int = 10  # mock N-best draws per expression and noise level
    seed: int = 0


def mock_nbest_for_manifest(manifest: Manifest, beta: float, seed: int, lexicon=None) -> dict:
    out = {}
    for rec, oi, ei, expr in manifest.iter_expressions():
        key = expression_key(rec.image_id, oi, ei)
        out[key] = mock_transcribe(expr.text, beta, expression_seed(seed, key), lexicon, utterance_id=key)
    return out


def train_all(
    manifest: Manifest,
    detections: dict,
    embedding_table: EmbeddingTable,
    vocab: ClassVocabulary,
    config: PipelineConfig,
    plan: TrainingPlan = TrainingPlan(),
    lexicon=None,
) -> Models:
    """Fit classifier, reranker (on mock N-best lists) and instance scorer on one manifest."""
    lexicon = default_lexicon() if lexicon is None else lexicon
    pairs = [(e.text, rec.objects[oi].class_label) for rec, oi, _, e in manifest.iter_expressions()]
    classifier = train_expr_classifier(pairs, vocab, embedding_table, plan.classifier).params

    idf = build_idf(tokenize(e.text) for _, _, _, e in manifest.iter_expressions())
    examples = []
    for draw in range(plan.reranker_draws):
        for beta in plan.reranker_betas:
            # draws start at seed + 1 so they differ from the evaluation draw
            nbest = mock_nbest_for_manifest(manifest, beta, plan.seed + 1 + draw, lexicon)
            examples += build_cider_targets(manifest, nbest, idf, config.image_feature_dim)
    reranker = train_reranker(examples, embedding_table, plan.reranker).params

    store = FeatureStore(manifest, config.box_feature_dim, config.image_feature_dim)
    scorer = train_instance_scorer(manifest, detections, embedding_table, store, plan.scorer).params
    return Models(embedding_table, vocab, reranker, classifier, scorer, lexicon)
