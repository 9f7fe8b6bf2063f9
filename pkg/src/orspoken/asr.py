"""N-best transcription: adapter contract for an external recognizer and an offline mock."""

from __future__ import annotations

import base64
import hashlib
import json
import os
import string
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .audio import TARGET_RATE, Waveform, check_noise_level, quantize
from .errors import AdapterError, UnrecognizableAudioError, ValidationError

MAX_ALTERNATIVES = 5
ADAPTER_ENV_VAR = "ORSPOKEN_ASR_ADAPTER"


@dataclass(frozen=True)
class Alternative:
    text: str
    confidence: float | None = None

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("alternative text must be nonempty")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class NBestList:
    utterance_id: str
    alternatives: tuple[Alternative, ...]

    def __post_init__(self):
        if not 1 <= len(self.alternatives) <= MAX_ALTERNATIVES:
            raise ValueError(
                f"N-best list must hold 1..{MAX_ALTERNATIVES} alternatives, got {len(self.alternatives)}"
            )

    @property
    def texts(self) -> list[str]:
        return [a.text for a in self.alternatives]

    @property
    def top(self) -> str:
        return self.alternatives[0].text

    def to_json(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "alternatives": [{"text": a.text, "confidence": a.confidence} for a in self.alternatives],
        }

    @classmethod
    def from_json(cls, d: dict) -> "NBestList":
        return cls(
            d.get("utterance_id", ""),
            tuple(Alternative(a["text"], a.get("confidence")) for a in d["alternatives"]),
        )


class AsrAdapter(Protocol):
    """Audio in, ranked alternatives out."""

    def recognize(self, audio: Waveform, language: str) -> Sequence[Alternative]: ...


def transcribe_nbest(
    audio: Waveform, client: AsrAdapter, utterance_id: str = "", language: str = "en-US", retries: int = 0
) -> NBestList:
    if audio.rate != TARGET_RATE:
        raise ValidationError(f"ASR input must be {TARGET_RATE} Hz, got {audio.rate}")
    for attempt in range(retries + 1):
        try:
            alts = list(client.recognize(audio, language))
            break
        except AdapterError:
            if attempt == retries:
                raise
    if not alts:
        raise UnrecognizableAudioError(f"recognizer returned no alternatives for {utterance_id!r}")
    return NBestList(utterance_id, tuple(alts[:MAX_ALTERNATIVES]))


class ScriptedAdapter:
    """Returns canned alternatives regardless of the audio; for tests and replays."""

    def __init__(self, alternatives):
        self.alternatives = [a if isinstance(a, Alternative) else Alternative(a) for a in alternatives]
        self.calls = 0

    def recognize(self, audio, language):
        self.calls += 1
        return list(self.alternatives)


class HttpAsrAdapter:
    """JSON-over-HTTP binding for an external recognizer.

    Request body: ``{"language", "sample_rate", "encoding": "LINEAR16",
    "audio": <base64 PCM16 mono>}``. Response body:
    ``{"alternatives": [{"text", "confidence"?}, ...]}`` ranked best first.
    """

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def recognize(self, audio, language):
        payload = {
            "language": language,
            "sample_rate": audio.rate,
            "encoding": "LINEAR16",
            "audio": base64.b64encode(quantize(audio.samples).tobytes()).decode("ascii"),
        }
        req = urllib.request.Request(
            self.url,
            data=json.dumps(payload).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise AdapterError(f"ASR request to {self.url} failed: {exc}") from exc
        try:
            return [Alternative(a["text"], a.get("confidence")) for a in body["alternatives"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise AdapterError(f"malformed ASR response from {self.url}: {exc}") from exc


def adapter_from_env(environ=None) -> AsrAdapter | None:
    """Adapter named by ORSPOKEN_ASR_ADAPTER; ``None`` selects the offline mock."""
    value = (environ if environ is not None else os.environ).get(ADAPTER_ENV_VAR, "mock")
    if value in ("", "mock"):
        return None
    if value.startswith(("http://", "https://")):
        return HttpAsrAdapter(value)
    raise ValidationError(f"{ADAPTER_ENV_VAR} must be 'mock' or an http(s) URL, got {value!r}")


# --- mock recognizer ----------------------------------------------------------


def load_confusion_lexicon(path=None) -> dict[str, tuple[str, ...]]:
    """Map each correct word to the wrong words it may be heard as."""
    if path is None:
        text = resources.files("orspoken").joinpath("data/confusions.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    lexicon: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise ValidationError(f"confusion lexicon line {lineno}: expected 'wrong<TAB>right'")
        wrong, right = parts[0].strip().lower(), parts[1].strip().lower()
        lexicon.setdefault(right, []).append(wrong)
    return {k: tuple(v) for k, v in lexicon.items()}


_DEFAULT_LEXICON = None


def default_lexicon():
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = load_confusion_lexicon()
    return _DEFAULT_LEXICON


def corruption_probability(beta: float, rank: int) -> float:
    """Per-token corruption probability of the rank-``rank`` (1-based) alternative."""
    return min(1.0, beta * (0.3 + 0.2 * (rank - 1)))


def corrupt_word(word: str, u: float, lexicon) -> str:
    """Deterministic misrecognition of ``word`` selected by ``u`` in [0, 1)."""
    key = word.lower().strip(string.punctuation)
    options = lexicon.get(key)
    if options:
        return options[int(u * len(options))]
    swaps = [i for i in range(len(word) - 1) if word[i] != word[i + 1]]
    if swaps:
        i = swaps[int(u * len(swaps))]
        return word[:i] + word[i + 1] + word[i] + word[i + 2 :]
    return word + word[-1]


def _stream(seed: int, text: str, rank: int) -> np.random.Generator:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return np.random.default_rng([seed & 0xFFFFFFFF, int.from_bytes(digest[:8], "little"), rank])


def mock_transcribe(
    ground_truth: str,
    beta: float,
    seed: int,
    lexicon=None,
    n_alternatives: int = MAX_ALTERNATIVES,
    utterance_id: str = "",
) -> NBestList:
    """Simulated N-best list whose error rate grows with noise level and rank.

    Random draws depend on (seed, text, rank) but not on ``beta``, so raising
    ``beta`` only ever adds corrupted tokens. Lower ranks that collide with an
    earlier alternative get further tokens corrupted until they differ.
    """
    beta = check_noise_level(beta)
    if not ground_truth.strip():
        raise ValidationError("ground truth text must be nonempty")
    lexicon = default_lexicon() if lexicon is None else lexicon
    words = ground_truth.split()
    alternatives: list[str] = []
    for rank in range(1, n_alternatives + 1):
        rng = _stream(seed, ground_truth, rank)
        gates = rng.random(len(words))
        picks = rng.random(len(words))
        order = rng.permutation(len(words))
        p = corruption_probability(beta, rank)
        corrupted = gates < p
        out = [corrupt_word(w, picks[i], lexicon) if corrupted[i] else w for i, w in enumerate(words)]
        text = " ".join(out) if corrupted.any() else ground_truth
        for i in order:
            if text not in alternatives:
                break
            if not corrupted[i]:
                corrupted[i] = True
                out[i] = corrupt_word(words[i], picks[i], lexicon)
                text = " ".join(out)
        alternatives.append(text)
    return NBestList(utterance_id, tuple(Alternative(t) for t in alternatives))
