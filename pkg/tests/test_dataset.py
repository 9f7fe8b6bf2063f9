import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orspoken.audio import Waveform
from orspoken.dataset import (
    BoundingBox,
    DetectionCandidate,
    FeatureVector,
    ImageRecord,
    Manifest,
    ObjectAnnotation,
    ProposalSet,
    ReferringExpression,
    iou,
    load_detections,
    load_feature_vector,
    load_manifest,
    save_detections,
    save_feature_vector,
    save_manifest,
    select_noise_window,
)
from orspoken.errors import AudioError, FeatureError, ManifestError, ValidationError


def _record(image_id="img", box=(10, 10, 50, 60)):
    return {
        "image_id": image_id,
        "width": 100,
        "height": 100,
        "feature_path": f"{image_id}.f32",
        "objects": [{"box": list(box), "class_label": "car", "expressions": [{"text": "the red car"}]}],
    }


def _write_lines(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


# --- types --------------------------------------------------------------------


@pytest.mark.parametrize("coords", [(5, 0, 5, 10), (0, 5, 10, 5), (10, 0, 5, 10), (-1, 0, 5, 5), (0, 0, float("nan"), 5)])
def test_bounding_box_rejects_bad_coordinates(coords):
    with pytest.raises(ValueError):
        BoundingBox(*coords)


def test_bounding_box_geometry():
    b = BoundingBox(1, 2, 4, 8)
    assert (b.width, b.height, b.area) == (3, 6, 18)
    assert BoundingBox.from_list(b.to_list()) == b


def test_expression_must_have_tokens():
    with pytest.raises(ValueError):
        ReferringExpression("  ?! ")
    assert ReferringExpression("the cat").text == "the cat"


def test_object_needs_label_and_expression():
    box = BoundingBox(0, 0, 1, 1)
    with pytest.raises(ValueError):
        ObjectAnnotation(box, "", (ReferringExpression("x"),))
    with pytest.raises(ValueError):
        ObjectAnnotation(box, "car", ())


def test_image_record_needs_positive_size():
    with pytest.raises(ValueError):
        ImageRecord("a", 0, 10, "a.f32", ())


@pytest.mark.parametrize("score", [-0.1, 1.5, float("nan"), float("inf")])
def test_candidate_score_range(score):
    with pytest.raises(ValueError):
        DetectionCandidate(BoundingBox(0, 0, 1, 1), "car", score)


def test_proposal_set_rejects_duplicates():
    c = DetectionCandidate(BoundingBox(0, 0, 1, 1), "car", 0.5)
    with pytest.raises(ValueError):
        ProposalSet("a", (c, c))
    # same box with another label is a different candidate
    ProposalSet("a", (c, DetectionCandidate(c.box, "dog", 0.5)))


def test_feature_vector_is_read_only_and_finite():
    fv = FeatureVector(np.arange(3.0))
    assert fv.dim == 3
    with pytest.raises(ValueError):
        fv.values[0] = 1.0
    with pytest.raises(FeatureError):
        FeatureVector(np.array([1.0, np.inf]))


# --- iou ----------------------------------------------------------------------


def test_iou_examples():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(20, 20, 30, 30)) == 0.0
    assert iou(a, BoundingBox(5, 0, 15, 10)) == pytest.approx(1 / 3, abs=1e-15)
    assert iou(a, BoundingBox(10, 0, 20, 10)) == 0.0  # touching edges


def _pixel_iou(a, b):
    # count unit cells on an integer grid
    grid = np.zeros((40, 40, 2), dtype=bool)
    for k, box in enumerate((a, b)):
        grid[int(box.y_min) : int(box.y_max), int(box.x_min) : int(box.x_max), k] = True
    inter = np.logical_and(grid[..., 0], grid[..., 1]).sum()
    union = np.logical_or(grid[..., 0], grid[..., 1]).sum()
    return inter / union


int_box = st.tuples(st.integers(0, 38), st.integers(0, 38), st.integers(1, 20), st.integers(1, 20)).map(
    lambda t: BoundingBox(t[0], t[1], min(40, t[0] + t[2]), min(40, t[1] + t[3]))
)


@settings(max_examples=200, deadline=None)
@given(int_box, int_box)
def test_iou_matches_pixel_count(a, b):
    assert iou(a, b) == pytest.approx(_pixel_iou(a, b), abs=1e-12)
    assert iou(a, b) == iou(b, a)


# --- manifest -----------------------------------------------------------------


def test_mini_manifest_counts(mini_manifest):
    assert len(mini_manifest) == 5
    assert mini_manifest.n_objects == 20


def test_empty_manifest(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    assert len(load_manifest(p)) == 0


def test_manifest_round_trip(tmp_path, mini_manifest):
    p = tmp_path / "m.jsonl"
    save_manifest(mini_manifest, p)
    again = load_manifest(p)
    assert again == mini_manifest
    save_manifest(again, tmp_path / "m2.jsonl")
    assert (tmp_path / "m2.jsonl").read_bytes() == p.read_bytes()


def test_manifest_bad_box_names_record_and_line(tmp_path):
    p = _write_lines(tmp_path / "m.jsonl", [_record("ok"), _record("bad", box=(50, 10, 20, 60))])
    with pytest.raises(ManifestError) as info:
        load_manifest(p)
    assert info.value.line == 2
    msg = str(info.value)
    assert "'bad'" in msg and "x_min" in msg and "objects[0]" in msg


def test_manifest_parse_error_has_line(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps(_record()) + "\n{not json\n")
    with pytest.raises(ManifestError) as info:
        load_manifest(p)
    assert info.value.line == 2
    assert isinstance(info.value, ValidationError)


def test_manifest_missing_field(tmp_path):
    rec = _record()
    del rec["width"]
    p = _write_lines(tmp_path / "m.jsonl", [rec])
    with pytest.raises(ManifestError, match="width"):
        load_manifest(p)


def test_manifest_duplicate_image_id(tmp_path):
    p = _write_lines(tmp_path / "m.jsonl", [_record("a"), _record("a")])
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(p)


def test_manifest_resolves_relative_paths(tmp_path):
    p = _write_lines(tmp_path / "m.jsonl", [_record("a")])
    m = load_manifest(p)
    assert m.resolve("a.f32") == tmp_path / "a.f32"
    assert m.by_id()["a"].width == 100


# --- feature vectors ----------------------------------------------------------


def test_feature_vector_dimensions(tmp_path):
    p = tmp_path / "f.f32"
    save_feature_vector(np.arange(4096, dtype=np.float32), p)
    assert load_feature_vector(p, 4096).dim == 4096
    save_feature_vector(np.zeros(4095), p)
    with pytest.raises(FeatureError, match="4096"):
        load_feature_vector(p, 4096)


def test_feature_vector_nan(tmp_path):
    p = tmp_path / "f.f32"
    save_feature_vector(np.array([0.0, np.nan, 1.0]), p)
    with pytest.raises(FeatureError, match="non-finite"):
        load_feature_vector(p, 3)


def test_feature_vector_little_endian(tmp_path):
    p = tmp_path / "f.f32"
    p.write_bytes(np.array([1.5, -2.0], dtype="<f4").tobytes())
    assert load_feature_vector(p, 2).values.tolist() == [1.5, -2.0]


# --- detections ---------------------------------------------------------------


def _det(image_id, score, x=0):
    return {"image_id": image_id, "box": [x, 0, x + 10, 10], "class_label": "car", "det_score": score}


def test_detections_sorted_by_score(tmp_path):
    p = _write_lines(tmp_path / "d.jsonl", [_det("A", 0.9, 0), _det("A", 0.5, 1), _det("A", 0.7, 2)])
    assert [c.det_score for c in load_detections(p)["A"]] == [0.9, 0.7, 0.5]


def test_detections_ties_keep_file_order(tmp_path):
    p = _write_lines(tmp_path / "d.jsonl", [_det("A", 0.5, 3), _det("A", 0.5, 1), _det("B", 0.2, 0)])
    ps = load_detections(p)
    assert [c.box.x_min for c in ps["A"]] == [3, 1]
    assert set(ps) == {"A", "B"}


def test_detections_empty_and_malformed(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text("")
    assert load_detections(p) == {}
    _write_lines(p, [_det("A", 0.5), {"image_id": "A", "box": [0, 0, 1], "class_label": "x", "det_score": 0.1}])
    with pytest.raises(ManifestError) as info:
        load_detections(p)
    assert info.value.line == 2


def test_detections_round_trip_is_stable(tmp_path, mini_detections):
    p = tmp_path / "d.jsonl"
    save_detections(mini_detections, p)
    assert load_detections(p) == mini_detections
    assert load_detections(p) == load_detections(p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=1, max_size=12))
def test_detection_order_is_total(scores):
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        p = _write_lines(Path(d) / "d.jsonl", [_det("A", s, i) for i, s in enumerate(scores)])
        ranked = load_detections(p)["A"].candidates
    expected = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    assert [int(c.box.x_min) for c in ranked] == expected


# --- noise window -------------------------------------------------------------


def _ramp(seconds=10, rate=16000):
    n = seconds * rate
    return Waveform(np.arange(n) / n, rate)


def test_noise_window_slice():
    noise = _ramp()
    w = select_noise_window(noise, 2.0, 1.0)
    assert np.array_equal(w.samples, noise.samples[32000:48000])


def test_noise_window_wraps():
    noise = _ramp()
    w = select_noise_window(noise, 9.5, 1.0)
    expected = np.concatenate([noise.samples[152000:], noise.samples[:8000]])
    assert np.array_equal(w.samples, expected)


def test_noise_window_full_length_is_identity():
    noise = _ramp(2)
    assert select_noise_window(noise, 0.0, noise.duration) == noise


def test_noise_window_errors():
    with pytest.raises(AudioError):
        select_noise_window(Waveform(np.zeros(0), 16000), 0.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 30), st.floats(0.01, 5), st.integers(1, 3000))
def test_noise_window_length(t, d, n):
    noise = Waveform(np.linspace(-1, 1, n), 1000)
    assert len(select_noise_window(noise, t, d)) == round(d * 1000)
