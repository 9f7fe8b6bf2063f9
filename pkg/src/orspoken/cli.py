"""Command-line entry point: ``orspoken <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 runtime failure (recognizer or
training). Paths to embeddings, class list, detections and model files
default to files next to the manifest.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .asr import NBestList, adapter_from_env, default_lexicon, load_confusion_lexicon
from .audio import DEFAULT_NOISE_LEVELS, NORMALIZERS, decode_wav, encode_wav, mix_noise, resample_to_16k
from .dataset import iou, load_detections, load_feature_vector, load_manifest, select_noise_window
from .errors import RuntimeFailure, ValidationError
from .fixtures import mini_dataset_dir
from .lid import FeatureStore, InstanceScorerParams, ScorerConfig, select_referred, train_instance_scorer
from .lop import (
    ClassifierConfig,
    ExprClassifierParams,
    filter_rank_proposals,
    load_class_vocabulary,
    predict_class,
    top_k_by_det_score,
    train_expr_classifier,
)
from .textmetrics import METRIC_NAMES, build_idf, score_all, tokenize
from .vgsr import (
    FusionScorerParams,
    RerankerConfig,
    build_cider_targets,
    expression_key,
    load_embedding_table,
    rerank,
    train_reranker,
)

log = logging.getLogger("orspoken")


# --- shared helpers -----------------------------------------------------------


def _manifest_dir(args) -> Path:
    return Path(args.manifest).resolve().parent


def _path(args, name: str, default: str) -> Path:
    value = getattr(args, name, None)
    return Path(value) if value else _manifest_dir(args) / default


def _manifest(args):
    return load_manifest(args.manifest)


def _detections(args):
    return load_detections(_path(args, "detections", "detections.jsonl"))


def _table(args):
    return load_embedding_table(_path(args, "embeddings", "embeddings.txt"))


def _vocab(args):
    return load_class_vocabulary(_path(args, "classes", "classes.txt"))


def _lexicon(args):
    return load_confusion_lexicon(args.lexicon) if getattr(args, "lexicon", None) else default_lexicon()


def _config(args, **overrides) -> harness.PipelineConfig:
    kw = {"seed": args.seed}
    if getattr(args, "budget", None) is not None:
        kw["proposal_budget"] = args.budget
    if getattr(args, "betas", None):
        kw["beta_levels"] = tuple(args.betas)
    if getattr(args, "noise", None):
        kw["noise_path"] = str(Path(args.noise).resolve())
    kw.update(overrides)
    return harness.PipelineConfig(**kw)


def _write_jsonl(rows, out) -> None:
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)


def _read_jsonl(path) -> list[dict]:
    rows = []
    for n, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{n}: invalid JSON: {exc.msg}") from None
    return rows


# --- commands -----------------------------------------------------------------


def cmd_mix_noise(args) -> None:
    speech = resample_to_16k(decode_wav(args.speech))
    noise = resample_to_16k(decode_wav(args.noise))
    if args.timestamp is not None:
        noise = select_noise_window(noise, args.timestamp, speech.duration)
    encode_wav(mix_noise(speech, noise, args.beta, args.normalization), args.out)


def cmd_score(args) -> None:
    pairs = []
    for d in _read_jsonl(args.pairs):
        if "candidate" not in d or "reference" not in d:
            raise ValidationError(f"{args.pairs}: each line needs 'candidate' and 'reference'")
        pairs.append((tokenize(d["candidate"]), tokenize(d["reference"])))
    if not pairs:
        raise ValidationError(f"{args.pairs}: no pairs")
    idf = build_idf(ref for _, ref in pairs)
    rows = []
    totals = {m: [] for m in METRIC_NAMES}
    for i, (cand, ref) in enumerate(pairs):
        scores = score_all(cand, ref, idf)
        for m in METRIC_NAMES:
            rows.append((f"{i}/{m}", scores[m].value))
            totals[m].append(scores[m].value)
    rows += [(f"mean/{m}", float(np.mean(totals[m]))) for m in METRIC_NAMES]
    text = harness.csv_text(("metric", "value"), rows)
    if args.out:
        Path(args.out).write_text(text, "utf-8")
    else:
        sys.stdout.write(text)


def cmd_transcribe(args) -> None:
    manifest = _manifest(args)
    lists = harness.transcribe_manifest(manifest, _config(args), args.beta, adapter_from_env(), _lexicon(args))
    _write_jsonl([dict(nb.to_json(), key=key) for key, nb in lists.items()], args.out)


def cmd_rerank(args) -> None:
    manifest = _manifest(args)
    table = _table(args)
    params = FusionScorerParams.load(_path(args, "model", harness.MODEL_FILES["reranker"]))
    if args.nbest:
        lists = {d["key"]: NBestList.from_json(d) for d in _read_jsonl(args.nbest)}
    else:
        lists = harness.transcribe_manifest(manifest, _config(args), args.beta, adapter_from_env(), _lexicon(args))
    rows = []
    for rec, oi, ei, _ in manifest.iter_expressions():
        key = expression_key(rec.image_id, oi, ei)
        if key not in lists:
            raise ValidationError(f"no N-best list for expression {key}")
        img = load_feature_vector(manifest.resolve(rec.feature_path), params.d_img)
        rows.append(dict(rerank(lists[key], img, params, table).to_json(), key=key))
    _write_jsonl(rows, args.out)


def cmd_propose(args) -> None:
    manifest = _manifest(args)
    detections = _detections(args)
    table, vocab = _table(args), _vocab(args)
    params = ExprClassifierParams.load(_path(args, "model", harness.MODEL_FILES["classifier"]))
    rows = []
    for rec, oi, ei, expr in manifest.iter_expressions():
        key = expression_key(rec.image_id, oi, ei)
        ps = detections.get(rec.image_id)
        if ps is None or len(ps) == 0:
            raise ValidationError(f"no detections for image {rec.image_id}")
        cls, rel, _ = predict_class(expr.text, params, vocab, table)
        chosen = filter_rank_proposals(ps, cls, rel, args.budget)
        rows.append({
            "key": key,
            "predicted_class": cls,
            "relevance": rel,
            "proposals": [{"box": c.box.to_list(), "class_label": c.class_label, "det_score": c.det_score}
                          for c in chosen.candidates],
        })
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(rows, out / "proposals.jsonl")
    models = harness.Models(table, vocab, None, params, None)
    config = _config(args, curve_k_ious=(args.threshold,), curve_iou_budgets=(args.budget,))
    for name, (cols, data) in sorted(harness.proposal_curves(manifest, detections, models, config).items()):
        (out / f"{name}.csv").write_text(harness.csv_text(cols, data), "utf-8")


def cmd_detect(args) -> None:
    manifest = _manifest(args)
    detections = _detections(args)
    table = _table(args)
    params = InstanceScorerParams.load(_path(args, "model", harness.MODEL_FILES["scorer"]))
    config = _config(args)
    store = FeatureStore(manifest, config.box_feature_dim, config.image_feature_dim)
    rows = []
    for rec, oi, ei, expr in manifest.iter_expressions():
        ps = detections.get(rec.image_id)
        if ps is None or len(ps) == 0:
            raise ValidationError(f"no detections for image {rec.image_id}")
        proposals = top_k_by_det_score(ps, config.proposal_budget)
        feats = [store.candidate_features(rec, c) for c in proposals.candidates]
        chosen, scores = select_referred(expr.text, proposals, feats, params, table)
        overlap = iou(chosen.box, rec.objects[oi].box)
        rows.append({
            "key": expression_key(rec.image_id, oi, ei),
            "box": chosen.box.to_list(),
            "score": float(scores.max()),
            "iou": overlap,
            "hit": overlap > config.iou_threshold,
        })
    _write_jsonl(rows, args.out)


def _training_output(args, kind: str) -> Path:
    return Path(args.out) if args.out else _manifest_dir(args) / harness.MODEL_FILES[kind]


def cmd_train_reranker(args) -> None:
    manifest = _manifest(args)
    config = _config(args)
    idf = build_idf(tokenize(e.text) for _, _, _, e in manifest.iter_expressions())
    examples = []
    for draw in range(args.draws):
        nbest = harness.mock_nbest_for_manifest(manifest, args.beta, args.seed + 1 + draw, _lexicon(args))
        examples += build_cider_targets(manifest, nbest, idf, config.image_feature_dim)
    run = train_reranker(examples, _table(args), RerankerConfig(lr=args.lr, epochs=args.epochs, seed=args.seed))
    run.params.save(_training_output(args, "reranker"))
    log.info("reranker loss %.6f -> %.6f", run.losses[0], run.losses[-1])


def cmd_train_classifier(args) -> None:
    manifest = _manifest(args)
    pairs = [(e.text, rec.objects[oi].class_label) for rec, oi, _, e in manifest.iter_expressions()]
    run = train_expr_classifier(
        pairs, _vocab(args), _table(args), ClassifierConfig(lr=args.lr, epochs=args.epochs, seed=args.seed)
    )
    run.params.save(_training_output(args, "classifier"))
    log.info("classifier loss %.6f -> %.6f", run.losses[0], run.losses[-1])


def cmd_train_scorer(args) -> None:
    manifest = _manifest(args)
    config = _config(args)
    store = FeatureStore(manifest, config.box_feature_dim, config.image_feature_dim)
    run = train_instance_scorer(
        manifest, _detections(args), _table(args), store,
        ScorerConfig(lr=args.lr, epochs=args.epochs, seed=args.seed),
    )
    run.params.save(_training_output(args, "scorer"))
    log.info("scorer loss %.6f -> %.6f (%d objects skipped)", run.losses[0], run.losses[-1], run.skipped)


def cmd_evaluate(args) -> None:
    manifest = _manifest(args)
    detections = _detections(args)
    table, vocab = _table(args), _vocab(args)
    config = _config(args)
    models_dir = Path(args.models) if args.models else _manifest_dir(args)
    if harness.have_models(models_dir):
        models = harness.load_models(models_dir, table, vocab, _lexicon(args))
    else:
        log.info("no trained models in %s; training on the manifest", models_dir)
        models = harness.train_all(
            manifest, detections, table, vocab, config, harness.TrainingPlan(seed=args.seed), _lexicon(args)
        )
    requested = args.mode or harness.SPEECH_MODES
    modes = harness.MODES if "all" in requested else tuple(dict.fromkeys(requested))
    report = harness.evaluate(
        manifest, detections, models, config, modes=modes, adapter=adapter_from_env(), curves=not args.no_curves
    )
    for path in harness.emit_report(report, args.out):
        log.info("wrote %s", path)


# --- argument parsing ---------------------------------------------------------


def _add_manifest(p, detections=False):
    p.add_argument("--manifest", default=str(mini_dataset_dir() / "manifest.jsonl"),
                   help="JSON-Lines manifest (default: bundled mini dataset)")
    if detections:
        p.add_argument("--detections", help="detections JSON-Lines (default: next to the manifest)")
    p.add_argument("--embeddings", help="word embedding table (default: next to the manifest)")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0)


def _add_training(p, lr, epochs):
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--out", help="params file (default: next to the manifest)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orspoken", description="Spoken object referring toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix-noise", help="mix a speech WAV with a noise WAV at level beta")
    p.add_argument("--speech", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--timestamp", type=float, help="start of the noise window in seconds")
    p.add_argument("--normalization", choices=sorted(NORMALIZERS), default="peak")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix_noise)

    p = sub.add_parser("score", help="transcription metrics for candidate/reference pairs")
    p.add_argument("--pairs", required=True, help="JSON-Lines with 'candidate' and 'reference'")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("transcribe", help="N-best lists for every expression of a manifest")
    _add_manifest(p)
    _add_seed(p)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--noise", help="noise recording for a real recognizer")
    p.add_argument("--lexicon", help="confusion lexicon for the mock recognizer")
    p.add_argument("--out", help="JSON-Lines path (default: stdout)")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("rerank", help="rerank N-best lists with the visual fusion scorer")
    _add_manifest(p)
    _add_seed(p)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--nbest", help="N-best JSON-Lines from 'transcribe' (default: transcribe now)")
    p.add_argument("--noise")
    p.add_argument("--lexicon")
    p.add_argument("--model", help="reranker params")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("propose", help="class-filtered proposals and recall curves")
    _add_manifest(p, detections=True)
    _add_seed(p)
    p.add_argument("--classes")
    p.add_argument("--model", help="expression classifier params")
    p.add_argument("--budget", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.5, help="IoU threshold for recall vs k")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("detect", help="select the referred box for every expression")
    _add_manifest(p, detections=True)
    _add_seed(p)
    p.add_argument("--model", help="instance scorer params")
    p.add_argument("--budget", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="full pipeline over noise levels and modes")
    _add_manifest(p, detections=True)
    _add_seed(p)
    p.add_argument("--classes")
    p.add_argument("--models", help="directory with trained params (default: next to the manifest)")
    p.add_argument("--mode", action="append", choices=harness.MODES + ("all",),
                   help="repeatable; default: baseline, vgsr and vgsr+lop")
    p.add_argument("--beta", dest="betas", type=float, action="append",
                   help=f"repeatable; default: {', '.join(map(str, DEFAULT_NOISE_LEVELS))}")
    p.add_argument("--budget", type=int)
    p.add_argument("--noise", help="noise recording for a real recognizer")
    p.add_argument("--lexicon")
    p.add_argument("--no-curves", action="store_true")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train-reranker", help="fit the fusion scorer on mock N-best lists")
    _add_manifest(p)
    _add_seed(p)
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--draws", type=int, default=10, help="mock N-best draws per expression")
    p.add_argument("--lexicon")
    _add_training(p, 0.1, 30)
    p.set_defaults(func=cmd_train_reranker)

    p = sub.add_parser("train-classifier", help="fit the expression class classifier")
    _add_manifest(p)
    _add_seed(p)
    p.add_argument("--classes")
    _add_training(p, ClassifierConfig.lr, ClassifierConfig.epochs)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train-scorer", help="fit the instance scorer")
    _add_manifest(p, detections=True)
    _add_seed(p)
    _add_training(p, 0.1, 600)
    p.set_defaults(func=cmd_train_scorer)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except RuntimeFailure as exc:
        print(f"orspoken: failed: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:  # ValidationError is a ValueError
        print(f"orspoken: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
