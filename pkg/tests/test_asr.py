import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orspoken.asr import (
    Alternative,
    HttpAsrAdapter,
    NBestList,
    ScriptedAdapter,
    adapter_from_env,
    corrupt_word,
    corruption_probability,
    default_lexicon,
    load_confusion_lexicon,
    mock_transcribe,
    transcribe_nbest,
)
from orspoken.audio import Waveform
from orspoken.errors import AdapterError, RuntimeFailure, UnrecognizableAudioError, ValidationError
from orspoken.fixtures import synthetic_expressions
from orspoken.textmetrics import bleu1, tokenize

AUDIO = Waveform(np.zeros(1600), 16000)


# --- n-best list --------------------------------------------------------------


def test_nbest_length_limits():
    with pytest.raises(ValueError):
        NBestList("u", ())
    with pytest.raises(ValueError):
        NBestList("u", tuple(Alternative(str(i)) for i in range(6)))
    with pytest.raises(ValueError):
        Alternative("   ")
    with pytest.raises(ValueError):
        Alternative("a", 1.5)


def test_nbest_json_round_trip():
    nb = NBestList("u1", (Alternative("a cat", 0.9), Alternative("a hat")))
    assert NBestList.from_json(json.loads(json.dumps(nb.to_json()))) == nb
    assert nb.top == "a cat" and nb.texts == ["a cat", "a hat"]


# --- transcribe_nbest ---------------------------------------------------------


def test_truncates_to_five_in_order():
    texts = [f"alt {i}" for i in range(7)]
    nb = transcribe_nbest(AUDIO, ScriptedAdapter(texts), "u")
    assert nb.texts == texts[:5]


def test_single_alternative_kept():
    assert transcribe_nbest(AUDIO, ScriptedAdapter(["only one"])).texts == ["only one"]


def test_passes_alternatives_verbatim():
    alts = [Alternative("The Cat!", 0.4), Alternative("the cat", 0.9)]
    nb = transcribe_nbest(AUDIO, ScriptedAdapter(alts))
    assert list(nb.alternatives) == alts


def test_empty_result_is_unrecognizable():
    with pytest.raises(UnrecognizableAudioError) as info:
        transcribe_nbest(AUDIO, ScriptedAdapter([]))
    assert isinstance(info.value, RuntimeFailure)


def test_requires_16k_audio():
    with pytest.raises(ValidationError):
        transcribe_nbest(Waveform(np.zeros(10), 8000), ScriptedAdapter(["x"]))


class _Flaky:
    def __init__(self, failures):
        self.failures = failures

    def recognize(self, audio, language):
        if self.failures:
            self.failures -= 1
            raise AdapterError("connection reset")
        return [Alternative("ok")]


def test_transport_failures_retry_then_raise():
    assert transcribe_nbest(AUDIO, _Flaky(2), retries=2).top == "ok"
    with pytest.raises(AdapterError) as info:
        transcribe_nbest(AUDIO, _Flaky(3), retries=2)
    assert info.value.retryable


# --- http adapter -------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    requests = []
    reply = {"alternatives": [{"text": "the red car", "confidence": 0.8}, {"text": "the bed car"}]}

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).requests.append(body)
        data = json.dumps(type(self).reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def asr_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.requests = []
    yield f"http://127.0.0.1:{server.server_address[1]}/recognize"
    server.shutdown()
    server.server_close()


def test_http_adapter_round_trip(asr_server):
    audio = Waveform(np.array([0.0, 0.5, -0.5]), 16000)
    nb = transcribe_nbest(audio, HttpAsrAdapter(asr_server), "u7", language="en-GB")
    assert nb.texts == ["the red car", "the bed car"]
    assert nb.alternatives[0].confidence == 0.8
    req = _Handler.requests[0]
    assert (req["language"], req["sample_rate"], req["encoding"]) == ("en-GB", 16000, "LINEAR16")
    assert np.frombuffer(base64.b64decode(req["audio"]), "<i2").tolist() == [0, 16384, -16384]


def test_http_adapter_connection_error():
    with pytest.raises(AdapterError):
        HttpAsrAdapter("http://127.0.0.1:9/none", timeout=2).recognize(AUDIO, "en-US")


def test_http_adapter_malformed_reply(asr_server, monkeypatch):
    monkeypatch.setattr(_Handler, "reply", {"results": []})
    with pytest.raises(AdapterError, match="malformed"):
        HttpAsrAdapter(asr_server).recognize(AUDIO, "en-US")


def test_adapter_from_env():
    assert adapter_from_env({}) is None
    assert adapter_from_env({"ORSPOKEN_ASR_ADAPTER": "mock"}) is None
    a = adapter_from_env({"ORSPOKEN_ASR_ADAPTER": "https://asr.example/v1"})
    assert isinstance(a, HttpAsrAdapter) and a.url == "https://asr.example/v1"
    with pytest.raises(ValidationError):
        adapter_from_env({"ORSPOKEN_ASR_ADAPTER": "google"})


# --- lexicon and mock ---------------------------------------------------------


def test_lexicon_file(tmp_path):
    p = tmp_path / "lex.tsv"
    p.write_text("# comment\nbed\tbald\nbold\tbald\nhat\tcat\n\n")
    lex = load_confusion_lexicon(p)
    assert lex == {"bald": ("bed", "bold"), "cat": ("hat",)}
    p.write_text("no tab here\n")
    with pytest.raises(ValidationError):
        load_confusion_lexicon(p)


def test_default_lexicon_covers_bald_bed_confusion():
    assert "bed" in default_lexicon()["bald"]


def test_corrupt_word():
    lex = {"bald": ("bed", "bold")}
    assert corrupt_word("bald", 0.0, lex) == "bed"
    assert corrupt_word("bald", 0.99, lex) == "bold"
    assert corrupt_word("cat", 0.0, lex) == "act"
    assert corrupt_word("aa", 0.5, lex) == "aaa"
    for w in ("cat", "window", "x", "aa"):
        assert corrupt_word(w, 0.3, lex) != w


def test_corruption_probability():
    assert corruption_probability(0.0, 3) == 0.0
    assert corruption_probability(0.1, 1) == pytest.approx(0.03)
    assert corruption_probability(0.3, 5) == pytest.approx(0.33)
    assert corruption_probability(1.0, 5) == 1.0


def test_mock_beta_zero_rank1_is_ground_truth():
    for i, text in enumerate(synthetic_expressions(50, 0)):
        nb = mock_transcribe(text, 0.0, i)
        assert nb.top == text
        assert len(nb.alternatives) == 5
        # lower ranks are still distinct perturbations
        assert len(set(nb.texts)) == 5


def test_mock_deterministic():
    a = mock_transcribe("the bald man using the laptop", 0.3, 11)
    b = mock_transcribe("the bald man using the laptop", 0.3, 11)
    assert a == b
    assert mock_transcribe("the bald man using the laptop", 0.3, 12) != a


def test_mock_rejects_empty_and_bad_beta():
    with pytest.raises(ValidationError):
        mock_transcribe("   ", 0.1, 0)
    with pytest.raises(ValidationError):
        mock_transcribe("a b", 1.5, 0)


def _changed(text, alt):
    return [a != b for a, b in zip(text.split(), alt.split())]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0, 1), st.floats(0, 1))
def test_rank1_corruption_monotone_in_beta(seed, b1, b2):
    lo, hi = sorted((b1, b2))
    text = "the small red window near the big bald man on the left"
    a = _changed(text, mock_transcribe(text, lo, seed).top)
    b = _changed(text, mock_transcribe(text, hi, seed).top)
    assert all(y for x, y in zip(a, b) if x)


def test_corruption_rate_monotone_in_beta_and_rank():
    texts = synthetic_expressions(300, 1)
    rates = {}
    for beta in (0.1, 0.3, 0.6, 1.0):
        per_rank = np.zeros(5)
        total = 0
        for i, t in enumerate(texts):
            nb = mock_transcribe(t, beta, i)
            for k, alt in enumerate(nb.texts):
                per_rank[k] += sum(_changed(t, alt))
            total += len(t.split())
        rates[beta] = per_rank / total
    betas = sorted(rates)
    for k in range(5):
        col = [rates[b][k] for b in betas]
        assert col == sorted(col)
    for b in betas:
        assert list(rates[b]) == sorted(rates[b])


def test_mock_bleu_drops_with_noise():
    texts = synthetic_expressions(500, 2)

    def mean_bleu(beta):
        return np.mean(
            [bleu1(tokenize(mock_transcribe(t, beta, i).top), tokenize(t)).value for i, t in enumerate(texts)]
        )

    assert mean_bleu(0.3) < mean_bleu(0.1) < mean_bleu(0.0) == 1.0
