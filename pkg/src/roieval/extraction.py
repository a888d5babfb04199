"""Structured RoI extraction from free-text reports.

Two backends share the ``Extractor`` interface:

* ``rules`` splits the report into sentences (terminal punctuation or
  newline) and, per field, takes the longest lexicon surface form found in
  the sentence. Sentences with no lexicon hit produce no record.
* ``remote-llm`` posts ``{"model", "prompt", "report_text"}`` to an HTTP
  service and expects a JSON array of extraction objects back. Replies are
  validated strictly and never repaired.
"""

from __future__ import annotations

import json
import os
import re
import threading
import unicodedata
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import httpx

from .embedding import post_json_with_retries
from .errors import ConfigError, SchemaError

FIELDS = ("anatomic_region", "lesion_type", "density", "morphology", "fdg_uptake")
KEYS = ("extraction_text",) + FIELDS
BACKENDS = ("remote-llm", "rules")

DEFAULT_PROMPT = (
    "Extract every region of interest described in the PET/CT report below. "
    "Return a JSON array; each element must have exactly these string keys: "
    "extraction_text (the verbatim source sentence), anatomic_region, lesion_type, "
    "density, morphology, fdg_uptake. Use an empty string for anything not stated. "
    "Do not report size, SUVmax, diagnoses, examinations, region codes or notes."
)


@dataclass(frozen=True)
class ExtractedRoI:
    extraction_text: str
    anatomic_region: str = ""
    lesion_type: str = ""
    density: str = ""
    morphology: str = ""
    fdg_uptake: str = ""

    def to_dict(self) -> dict[str, str]:
        return asdict(self)

    def fields(self) -> dict[str, str]:
        return {name: getattr(self, name) for name in FIELDS}


def validate_extracted(record: Any) -> ExtractedRoI:
    """Check a raw extraction object against the six-key schema.

    Absent field keys count as empty strings. ``extraction_text`` is
    mandatory; unknown keys (``size``, ``suv_max`` ...) and non-string values
    are rejected.
    """
    if not isinstance(record, Mapping):
        raise SchemaError(f"extraction must be an object, got {type(record).__name__}")
    extra = sorted(set(record) - set(KEYS))
    if extra:
        raise SchemaError(f"unexpected extraction keys: {extra}")
    if "extraction_text" not in record:
        raise SchemaError("extraction is missing 'extraction_text'")
    values = {}
    for key in KEYS:
        value = record.get(key, "")
        if value is None:
            value = ""
        if not isinstance(value, str):
            raise SchemaError(f"extraction key {key!r} must be a string, got {type(value).__name__}")
        values[key] = value if key == "extraction_text" else " ".join(value.split())
    return ExtractedRoI(**values)


def split_sentences(text: str) -> list[tuple[int, int]]:
    """(start, end) spans of sentences; boundaries are newlines and ``.!?``
    followed by whitespace or end of text. Spans are trimmed of whitespace."""
    spans = []
    for line in re.finditer(r"[^\n]+", text):
        base = line.start()
        start = 0
        chunk = line.group()
        for m in re.finditer(r"[.!?]+(?=\s|$)", chunk):
            spans.append((base + start, base + m.end()))
            start = m.end()
        spans.append((base + start, base + len(chunk)))
    out = []
    for s, e in spans:
        seg = text[s:e]
        lead = len(seg) - len(seg.lstrip())
        trail = len(seg) - len(seg.rstrip())
        if e - trail > s + lead:
            out.append((s + lead, e - trail))
    return out


@dataclass
class Lexicon:
    """Surface form -> field name map with precompiled case-insensitive patterns."""

    entries: dict[str, str]
    _patterns: dict[str, list[tuple[str, re.Pattern]]] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("empty lexicon")
        self._patterns = {f: [] for f in FIELDS}
        for form, name in self.entries.items():
            if name not in FIELDS:
                raise ConfigError(f"lexicon maps {form!r} to unknown field {name!r}")
            norm = unicodedata.normalize("NFC", form).strip()
            if not norm:
                raise ConfigError("lexicon contains an empty surface form")
            pat = re.compile(r"(?<!\w)" + re.escape(norm) + r"(?!\w)", re.IGNORECASE)
            self._patterns[name].append((norm, pat))
        for name in FIELDS:
            # longest first, then alphabetical, so lookup order is fixed
            self._patterns[name].sort(key=lambda fp: (-len(fp[0]), fp[0]))

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid lexicon JSON ({exc})") from None
        if not isinstance(data, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in data.items()):
            raise ConfigError(f"{path}: lexicon must be a JSON object of strings")
        return cls(data)

    def lookup(self, sentence: str) -> dict[str, str]:
        """Longest matching surface form per field; earliest position breaks ties."""
        text = unicodedata.normalize("NFC", sentence)
        found = {}
        for name, patterns in self._patterns.items():
            best = None
            for form, pat in patterns:
                if best is not None and len(form) < len(best[0]):
                    break
                m = pat.search(text)
                if m and (best is None or m.start() < best[1]):
                    best = (form, m.start())
            if best is not None:
                found[name] = best[0]
        return found


@dataclass(frozen=True)
class ExtractorConfig:
    backend: str = "rules"
    endpoint: Optional[str] = None
    model_name: str = ""
    prompt_template: str = DEFAULT_PROMPT
    max_retries: int = 3
    timeout: float = 60.0
    lexicon_path: Optional[str] = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown extractor backend {self.backend!r}")
        if self.max_retries < 0 or self.timeout <= 0:
            raise ConfigError("max_retries must be >= 0 and timeout > 0")

    def descriptor(self) -> dict[str, Any]:
        out = {"backend": self.backend}
        if self.backend == "rules":
            out["lexicon_path"] = self.lexicon_path
        else:
            out.update(endpoint=self.endpoint, model=self.model_name,
                       prompt_template=self.prompt_template)
        return out


class Extractor:
    backend = "abstract"

    def extract(self, report_text: str) -> list[ExtractedRoI]:
        raise NotImplementedError

    def descriptor(self) -> dict[str, Any]:
        return {"backend": self.backend}


class RuleExtractor(Extractor):
    backend = "rules"

    def __init__(self, lexicon: Lexicon | Mapping[str, str], source: Optional[str] = None):
        self.lexicon = lexicon if isinstance(lexicon, Lexicon) else Lexicon(dict(lexicon))
        self.source = source

    def descriptor(self):
        return {"backend": self.backend, "lexicon_path": self.source,
                "lexicon_size": len(self.lexicon.entries)}

    def extract(self, report_text: str) -> list[ExtractedRoI]:
        out = []
        for start, end in split_sentences(report_text):
            sentence = report_text[start:end]
            hits = self.lexicon.lookup(sentence)
            if hits:
                out.append(ExtractedRoI(extraction_text=sentence, **hits))
        return out


class RemoteExtractor(Extractor):
    """Client for a hosted LLM extraction service; safe to share across threads."""

    backend = "remote-llm"

    def __init__(self, endpoint: Optional[str], model_name: str,
                 prompt_template: str = DEFAULT_PROMPT, max_retries: int = 3,
                 timeout: float = 60.0, api_key: Optional[str] = None,
                 transport: Optional[httpx.BaseTransport] = None, retry_backoff: float = 0.5):
        endpoint = endpoint or os.environ.get("EXTRACTOR_ENDPOINT")
        if not endpoint or not model_name:
            raise ConfigError("remote extractor needs an endpoint and a model name")
        self.endpoint = endpoint
        self.model_name = model_name
        self.prompt_template = prompt_template
        self.max_retries = max_retries
        self.retry_backoff = retry_backoff
        key = api_key if api_key is not None else os.environ.get("EXTRACTOR_API_KEY")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def descriptor(self):
        return {"backend": self.backend, "endpoint": self.endpoint, "model": self.model_name,
                "prompt_template": self.prompt_template}

    def close(self):
        self._client.close()

    def extract(self, report_text: str) -> list[ExtractedRoI]:
        if not report_text.strip():
            return []
        payload = {"model": self.model_name, "prompt": self.prompt_template,
                   "report_text": report_text}
        body = post_json_with_retries(self._client, self.endpoint, payload,
                                      self.max_retries, self.retry_backoff, what="extraction")
        if not isinstance(body, list):
            raise SchemaError("extraction reply must be a JSON array")
        records = [validate_extracted(item) for item in body]
        positioned = []
        for rec in records:
            pos = report_text.find(rec.extraction_text)
            if pos < 0:
                raise SchemaError(
                    f"extraction_text is not a substring of the report: {rec.extraction_text!r}")
            positioned.append((pos, rec))
        positioned.sort(key=lambda pr: pr[0])
        return [rec for _, rec in positioned]


def make_extractor(config: ExtractorConfig, **kwargs) -> Extractor:
    if config.backend == "rules":
        if not config.lexicon_path:
            raise ConfigError("rules backend requires a lexicon")
        return RuleExtractor(Lexicon.load(config.lexicon_path), source=config.lexicon_path)
    return RemoteExtractor(config.endpoint, config.model_name, config.prompt_template,
                           config.max_retries, config.timeout, **kwargs)


_shared: dict[ExtractorConfig, Extractor] = {}
_shared_lock = threading.Lock()


def extract_rois(report_text: str, config: ExtractorConfig | Extractor) -> list[ExtractedRoI]:
    """Extract RoI records from one report, in sentence order."""
    if isinstance(config, Extractor):
        extractor = config
    else:
        with _shared_lock:
            extractor = _shared.get(config)
            if extractor is None:
                extractor = _shared[config] = make_extractor(config)
    if not report_text:
        return []
    return extractor.extract(report_text)
