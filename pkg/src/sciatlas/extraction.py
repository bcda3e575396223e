"""Aspect extraction through a pluggable text-generation client.

Six aspects per publication (problem keyphrase/definition/discipline,
method keyphrase/definition, usage) plus a two-flag AI4Science
classification. Prompts ship verbatim as versioned template files with
named ``{slot}`` markers. Three client backends:

* ``mock``        - deterministic keyword-table lookup, fully offline;
* ``remote``      - HTTPS chat-completion endpoint (identity is config);
* ``replay-cache``- content-addressed response directory, optionally
                    falling back to another client on miss.

Results are cached keyed by (title, abstract, prompt_version, model_id),
so venue/year edits never invalidate an extraction.
"""

from __future__ import annotations

import ast
import json
import re
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterator

from ._util import atomic_write_text, content_key
from .corpus import Corpus, Publication

PROMPT_VERSIONS = ("v1",)

_PROMPT_FILES = {
    "extract_aspects": "extract_aspects_{version}.txt",
    "classify_ai4science": "classify_ai4science_{version}.txt",
    "summarize_problem_cluster": "summarize_problem_cluster_{version}.txt",
    "summarize_method_cluster": "summarize_method_cluster_{version}.txt",
    "rag_sci_to_ai": "rag_sci_to_ai_{version}.txt",
    "rag_ai_to_sci": "rag_ai_to_sci_{version}.txt",
    "graph_sci_to_ai": "graph_sci_to_ai_{version}.txt",
    "graph_ai_to_sci": "graph_ai_to_sci_{version}.txt",
}

_SLOT_RE = re.compile(r"\{([A-Za-z][A-Za-z ]*)\}")

ASPECT_KEYS = (
    "Problem (keyword/keyphrase)",
    "Problem (definition)",
    "Problem Discipline",
    "Method (keyword/keyphrase)",
    "Method (definition)",
    "Usage",
)


class GenError(Exception):
    """Generation failed (transport, rate limit, missing cache entry)."""


class ExtractionError(Exception):
    """Extraction set level problem (bad file, failed batch)."""


def load_prompt(task: str, version: str = "v1") -> str:
    """Return the raw template text for a prompt task."""
    if version not in PROMPT_VERSIONS:
        raise ValueError(f"unknown prompt version {version!r}")
    if task not in _PROMPT_FILES:
        raise ValueError(f"unknown prompt task {task!r}")
    name = _PROMPT_FILES[task].format(version=version)
    return resources.files("sciatlas.prompts").joinpath(name).read_text(encoding="utf-8")


def render_prompt(template: str, slots: dict) -> str:
    """Substitute named ``{slot}`` markers in a single pass.

    Only markers whose name appears in `slots` are replaced; JSON braces
    in the templates pass through untouched. Single-pass substitution
    means slot values are never re-scanned for markers.
    """

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name in slots:
            return str(slots[name])
        return match.group(0)

    return _SLOT_RE.sub(_sub, template)


class GenClient(ABC):
    """Text-generation backend. Implementations must be deterministic or cached.

    `tag` differentiates repeated samples of the same prompt: it enters
    cache keys and steers the mock's choice, while remote backends ignore
    it (their diversity comes from server-side sampling).
    """

    backend: str = "abstract"

    def __init__(self, model_id: str = "default"):
        self.model_id = model_id
        self.calls = 0

    @abstractmethod
    def generate(self, prompt: str, model_id: str | None = None, tag: str = "") -> str:
        """Return the completion text for `prompt`."""


# Keyword tables for the offline mock. Triggers are matched in order
# against the lowercased title+abstract; the first hit wins. The tables
# are intentionally small: they exist so CI can run every pipeline stage
# without network access, not to approximate a real extractor.
MOCK_PROBLEM_RULES = (
    ("protein folding", "protein structure prediction",
     "Determining the three dimensional structure of a protein from its amino acid sequence.",
     "Structural Biology"),
    ("climate projection", "climate modeling",
     "Simulating the long term evolution of the climate system under varying forcings.",
     "Climate Science"),
    ("drug candidate screening", "drug discovery",
     "Identifying candidate molecules with therapeutic activity against a biological target.",
     "Pharmacology"),
    ("galaxy morphology", "galaxy classification",
     "Assigning galaxies to morphological classes from telescope imagery.",
     "Astronomy"),
    ("seismic hazard", "earthquake forecasting",
     "Estimating the probability and magnitude of future seismic events in a region.",
     "Geophysics"),
    ("crop yield", "crop yield prediction",
     "Estimating agricultural output of a field or region ahead of harvest.",
     "Agronomy"),
    ("alloy design", "materials discovery",
     "Searching composition and structure spaces for materials with target properties.",
     "Materials Science"),
    ("benchmark leaderboard", "image classification benchmarks",
     "Measuring recognition accuracy of vision systems on labeled image collections.",
     "Computer Science"),
)

MOCK_METHOD_RULES = (
    ("convolutional network", "deep convolutional neural network",
     "A layered neural network that learns hierarchical features through convolution operations.",
     True),
    ("graph neural", "graph neural network",
     "A neural architecture that propagates information along the edges of a graph.",
     True),
    ("random forest", "random forest",
     "An ensemble of decision trees trained on bootstrapped samples with feature bagging.",
     True),
    ("transformer", "transformer language model",
     "A sequence model built on self attention that captures long range dependencies.",
     True),
    ("reinforcement learning", "reinforcement learning",
     "A method for learning control policies from reward signals through interaction.",
     True),
    ("finite element", "finite element simulation",
     "A numerical scheme that discretizes continuous domains to solve differential equations.",
     False),
    ("mass spectrometry", "mass spectrometry assay",
     "A laboratory technique measuring mass to charge ratios of ionized molecules.",
     False),
)

MOCK_NON_SCIENTIFIC_DISCIPLINES = {"computer science", "information science", "data science"}

# Sentinel tokens force absent fields regardless of keyword hits.
SENTINEL_NO_AI = "__NOAI__"
SENTINEL_NO_SCIENCE = "__NOSCI__"

_TITLE_LINE_RE = re.compile(r"^Title: (.*)$", re.MULTILINE)
_ABSTRACT_LINE_RE = re.compile(r"^Abstract: (.*?)(?=\n##|\Z)", re.MULTILINE | re.DOTALL)
_TRIPLE_RE = re.compile(r'\("(.*?)", "(.*?)", (\d+)\)')
_RECOMMEND_K_RE = re.compile(r"Exactly recommend (\d+)")


class MockGenClient(GenClient):
    """Deterministic offline backend: pure function of (prompt, tag).

    Recognizes each shipped prompt family by its task header and answers
    from the keyword tables above.
    """

    backend = "mock"

    def __init__(self, model_id: str = "mock-1"):
        super().__init__(model_id=model_id)

    def generate(self, prompt: str, model_id: str | None = None, tag: str = "") -> str:
        self.calls += 1
        if "your task is to extract the following aspects" in prompt:
            return self._answer_extraction(prompt)
        if "please determine if the main research problem" in prompt:
            return self._answer_classification(prompt)
        if "help summarizing the cluster" in prompt:
            return self._answer_summarization(prompt)
        if "## Examples of AI usage in similar scientific papers:" in prompt:
            return self._answer_rag(prompt, tag)
        if "Format of past usage of AI methods" in prompt:
            return self._answer_graph(prompt)
        raise GenError("mock client does not recognize this prompt")

    def _answer_extraction(self, prompt: str) -> str:
        title = _TITLE_LINE_RE.search(prompt)
        abstract = _ABSTRACT_LINE_RE.search(prompt)
        text = ((title.group(1) if title else "") + " " +
                (abstract.group(1) if abstract else ""))
        lowered = text.lower()

        problem = ("N/A", "N/A", "N/A")
        if SENTINEL_NO_SCIENCE not in text:
            for trigger, keyphrase, definition, discipline in MOCK_PROBLEM_RULES:
                if trigger in lowered:
                    problem = (keyphrase, definition, discipline)
                    break
        method = ("N/A", "N/A")
        if SENTINEL_NO_AI not in text:
            for trigger, keyphrase, definition, _ in MOCK_METHOD_RULES:
                if trigger in lowered:
                    method = (keyphrase, definition)
                    break
        if problem[0] != "N/A" and method[0] != "N/A":
            usage = f"{method[0]} is applied to {problem[0]}."
        else:
            usage = "N/A"
        return json.dumps(
            {
                "Problem (keyword/keyphrase)": problem[0],
                "Problem (definition)": problem[1],
                "Problem Discipline": problem[2],
                "Method (keyword/keyphrase)": method[0],
                "Method (definition)": method[1],
                "Usage": usage,
            },
            indent=4,
        )

    def _answer_classification(self, prompt: str) -> str:
        # Parse only the extraction-results section: the prompt ends with
        # a response-format block whose braces would confuse a whole-text
        # scan.
        section = prompt.split("## Extraction Results", 1)[-1]
        section = section.split("## Note", 1)[0]
        fields = _parse_aspect_fields(section)
        discipline = (fields.get("problem discipline") or "").strip().lower()
        is_scientific = bool(discipline) and discipline != "n/a" \
            and discipline not in MOCK_NON_SCIENTIFIC_DISCIPLINES
        method = (fields.get("method (keyword/keyphrase)") or "").strip().lower()
        ai_keyphrases = {rule[1].lower() for rule in MOCK_METHOD_RULES if rule[3]}
        uses_ai = method in ai_keyphrases
        return ('{\n    "Scientific problem": %s,\n    "AI method": %s,\n}'
                % (is_scientific, uses_ai))

    def _answer_summarization(self, prompt: str) -> str:
        terms: list[str] = []
        lines = prompt.splitlines()
        for i, line in enumerate(lines):
            if line.startswith("Below are some top words"):
                if i + 1 < len(lines) and lines[i + 1].strip():
                    terms = [t.strip() for t in lines[i + 1].split(",") if t.strip()]
                break
        if not terms:
            return '["N/A"]'
        label = " ".join(w.capitalize() for w in terms[0].split())
        return json.dumps([label])

    def _answer_rag(self, prompt: str, tag: str) -> str:
        to_ai = "recommend potential Artificial Intelligence methods" in prompt
        key_field = ("Method (keyword/keyphrase): " if to_ai
                     else "Problem (keyword/keyphrase): ")
        out_key = ("AI Method (keyword/keyphrase)" if to_ai
                   else "Scientific Problem (keyword/keyphrase)")
        examples_part = prompt.split("## Examples of AI usage in similar scientific papers:", 1)[1]
        examples_part = examples_part.split("## Notes", 1)[0]
        keyphrases = []
        usages = []
        for line in examples_part.splitlines():
            line = line.strip()
            if line.startswith(key_field):
                keyphrases.append(line[len(key_field):].strip())
            elif line.startswith("Usage: "):
                usages.append(line[len("Usage: "):].strip())
        index = int(tag) if tag.isdigit() else 0
        if keyphrases:
            pick = index % len(keyphrases)
            keyphrase = keyphrases[pick]
            usage = usages[pick] if pick < len(usages) else "N/A"
        else:
            # No exemplars (direct mode): rotate over the keyword table.
            if to_ai:
                pool = [(r[1], f"{r[1]} is applied to the stated problem.")
                        for r in MOCK_METHOD_RULES if r[3]]
            else:
                pool = [(r[1], f"an AI method is applied to {r[1]}.")
                        for r in MOCK_PROBLEM_RULES
                        if r[3].lower() not in MOCK_NON_SCIENTIFIC_DISCIPLINES]
            seed = int(content_key(prompt), 16)
            keyphrase, usage = pool[(seed + index) % len(pool)]
        return json.dumps([{out_key: keyphrase, "AI Usage": usage}], indent=4)

    def _answer_graph(self, prompt: str) -> str:
        to_ai = "Given a scientific problem domain" in prompt
        source_header = ("## Scientific problem domain" if to_ai
                         else "## Artificial Intelligence method domain")
        pool_header = ("## Possible Artificial Intelligence domains" if to_ai
                       else "## Possible scientific problem domains")
        source = _section_lines(prompt, source_header)
        pool = _section_lines(prompt, pool_header, all_lines=True)
        k_match = _RECOMMEND_K_RE.search(prompt)
        k = int(k_match.group(1)) if k_match else 1
        source_label = source[0] if source else ""
        neighbors = []
        for u, v, count in _TRIPLE_RE.findall(prompt):
            if to_ai and u == source_label:
                neighbors.append((-int(count), v))
            elif not to_ai and v == source_label:
                neighbors.append((-int(count), u))
        picks: list[str] = []
        for _, label in sorted(neighbors):
            if label not in picks:
                picks.append(label)
            if len(picks) == k:
                break
        for label in sorted(pool):
            if len(picks) == k:
                break
            if label not in picks:
                picks.append(label)
        return json.dumps(picks[:k], indent=4)


def _section_lines(prompt: str, header: str, all_lines: bool = False) -> list[str]:
    """Non-empty lines following `header` up to the next '##' heading."""
    if header not in prompt:
        return []
    block = prompt.split(header, 1)[1]
    collected = []
    for line in block.splitlines():
        stripped = line.strip()
        if stripped.startswith("##"):
            break
        if stripped:
            collected.append(stripped)
            if not all_lines:
                break
    return collected


class RemoteGenClient(GenClient):
    """Chat-completion endpoint speaking the common JSON wire format.

    POSTs ``{"model": ..., "messages": [{"role": "user", "content": ...}]}``
    to ``{base_url}/chat/completions`` and returns
    ``choices[0].message.content``. The API key is read from an
    environment variable at call time; base URL and model id are plain
    configuration.
    """

    backend = "remote"

    def __init__(
        self,
        base_url: str,
        model_id: str,
        api_key_env: str = "SCIATLAS_API_KEY",
        rate_limit: float | None = None,
        max_retries: int = 3,
        timeout: float = 60.0,
    ):
        super().__init__(model_id=model_id)
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.rate_limit = rate_limit
        self.max_retries = max_retries
        self.timeout = timeout
        self._lock = threading.Lock()
        self._last_request = 0.0

    def _throttle(self) -> None:
        if not self.rate_limit:
            return
        interval = 1.0 / self.rate_limit
        with self._lock:
            wait = self._last_request + interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()

    def generate(self, prompt: str, model_id: str | None = None, tag: str = "") -> str:
        import os

        import requests

        model = model_id or self.model_id
        headers = {}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {"model": model, "messages": [{"role": "user", "content": prompt}]}
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            self._throttle()
            self.calls += 1
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                time.sleep(min(0.25 * 2**attempt, 4.0))
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = GenError(f"HTTP {resp.status_code}")
                time.sleep(min(0.25 * 2**attempt, 4.0))
                continue
            if resp.status_code != 200:
                raise GenError(f"generation endpoint returned HTTP {resp.status_code}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise GenError(f"malformed generation response: {exc}") from exc
        raise GenError(f"generation failed after {self.max_retries + 1} attempts: {last_error}")


class ReplayCacheClient(GenClient):
    """Serve responses from a content-addressed directory.

    On miss, delegate to `fallback` and persist its answer; without a
    fallback a miss is an error. Useful both for replaying recorded
    remote sessions and for making any backend idempotent.
    """

    backend = "replay-cache"

    def __init__(self, cache_dir: str | Path, fallback: GenClient | None = None,
                 model_id: str | None = None):
        super().__init__(model_id=model_id or (fallback.model_id if fallback else "replay"))
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.fallback = fallback
        self.hits = 0
        self.misses = 0

    def generate(self, prompt: str, model_id: str | None = None, tag: str = "") -> str:
        self.calls += 1
        model = model_id or self.model_id
        path = self.cache_dir / f"{content_key(prompt, model, tag)}.txt"
        if path.exists():
            self.hits += 1
            return path.read_text(encoding="utf-8")
        self.misses += 1
        if self.fallback is None:
            raise GenError(f"replay cache miss for prompt hash {path.stem[:12]}")
        response = self.fallback.generate(prompt, model_id=model, tag=tag)
        atomic_write_text(path, response)
        return response


@dataclass
class AspectExtraction:
    """Six extracted aspects plus classification flags for one publication.

    The literal marker "N/A" and empty strings are normalized to None at
    parse time; `usage` is kept only when a method keyphrase is present.
    """

    pub_id: str
    problem_keyphrase: str | None = None
    problem_definition: str | None = None
    problem_discipline: str | None = None
    method_keyphrase: str | None = None
    method_definition: str | None = None
    usage: str | None = None
    is_scientific: bool = False
    uses_ai: bool = False
    prompt_version: str = "v1"
    model_id: str = ""
    parse_warning: bool = False
    error: str | None = None

    @property
    def has_problem(self) -> bool:
        return self.problem_keyphrase is not None and self.problem_definition is not None

    @property
    def has_method(self) -> bool:
        return self.method_keyphrase is not None and self.method_definition is not None

    @property
    def ai4science(self) -> bool:
        """Scientific problem solved with an AI method, usage described."""
        return (
            self.is_scientific
            and self.uses_ai
            and self.has_problem
            and self.has_method
            and self.usage is not None
        )

    def problem_text(self) -> str | None:
        if not self.has_problem:
            return None
        return f"{self.problem_keyphrase}, {self.problem_definition}"

    def method_text(self) -> str | None:
        if not self.has_method:
            return None
        return f"{self.method_keyphrase}, {self.method_definition}"

    def to_record(self) -> dict:
        return {
            "pub_id": self.pub_id,
            "problem_keyphrase": self.problem_keyphrase,
            "problem_definition": self.problem_definition,
            "problem_discipline": self.problem_discipline,
            "method_keyphrase": self.method_keyphrase,
            "method_definition": self.method_definition,
            "usage": self.usage,
            "is_scientific": self.is_scientific,
            "uses_ai": self.uses_ai,
            "prompt_version": self.prompt_version,
            "model_id": self.model_id,
            "parse_warning": self.parse_warning,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, record: dict) -> "AspectExtraction":
        return cls(**{key: record.get(key) for key in cls.__dataclass_fields__
                      if key in record})


EXTRACTIONS_FORMAT = "sciatlas-extractions"
EXTRACTIONS_VERSION = 1


class ExtractionSet:
    """Immutable pub_id-indexed collection of extraction records."""

    def __init__(self, records: list[AspectExtraction]):
        self._by_id: dict[str, AspectExtraction] = {}
        for rec in sorted(records, key=lambda r: r.pub_id):
            if rec.pub_id in self._by_id:
                raise ExtractionError(f"duplicate extraction for pub {rec.pub_id!r}")
            self._by_id[rec.pub_id] = rec

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, pub_id: str) -> bool:
        return pub_id in self._by_id

    def __getitem__(self, pub_id: str) -> AspectExtraction:
        return self._by_id[pub_id]

    def __iter__(self) -> Iterator[AspectExtraction]:
        return iter(self._by_id.values())

    def get(self, pub_id: str) -> AspectExtraction | None:
        return self._by_id.get(pub_id)

    def ids(self) -> list[str]:
        return list(self._by_id)

    def save(self, path: str | Path) -> None:
        lines = [json.dumps({"format": EXTRACTIONS_FORMAT, "version": EXTRACTIONS_VERSION})]
        lines.extend(
            json.dumps(rec.to_record(), ensure_ascii=False, sort_keys=True)
            for rec in self
        )
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExtractionSet":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ExtractionError(f"cannot read extractions {path}: {exc}") from exc
        if not lines:
            raise ExtractionError(f"extractions file {path} is empty")
        header = json.loads(lines[0])
        if header.get("format") != EXTRACTIONS_FORMAT or header.get("version") != EXTRACTIONS_VERSION:
            raise ExtractionError(f"{path} is not a v{EXTRACTIONS_VERSION} extractions file")
        records = [AspectExtraction.from_record(json.loads(line))
                   for line in lines[1:] if line.strip()]
        return cls(records)


class ExtractionCache:
    """One JSON file per content key; concurrent-read, atomic-write."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> dict | None:
        path = self.cache_dir / f"{key}.json"
        if not path.exists():
            self.misses += 1
            return None
        self.hits += 1
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, record: dict) -> None:
        atomic_write_text(self.cache_dir / f"{key}.json",
                          json.dumps(record, ensure_ascii=False, sort_keys=True))


def _normalize_field(value) -> str | None:
    """Map "N/A" (any case) and empty/whitespace strings to absent."""
    if not isinstance(value, str):
        return None
    stripped = value.strip()
    if not stripped or stripped.upper() == "N/A":
        return None
    return stripped


def _parse_structured(response: str):
    """Best-effort parse of a JSON / python-literal object in a response."""
    start = response.find("{")
    end = response.rfind("}")
    if start == -1 or end <= start:
        return None
    snippet = response[start:end + 1]
    for parser in (json.loads, ast.literal_eval):
        try:
            value = parser(snippet)
        except (ValueError, SyntaxError):
            continue
        if isinstance(value, dict):
            return value
    # Tolerate a trailing comma before the closing brace (the
    # classification response format shows one).
    cleaned = re.sub(r",\s*}", "}", snippet)
    for parser in (json.loads, ast.literal_eval):
        try:
            value = parser(cleaned)
        except (ValueError, SyntaxError):
            continue
        if isinstance(value, dict):
            return value
    return None


def _parse_aspect_fields(text: str) -> dict:
    """Pull the six aspect fields out of a response, keys casefolded."""
    parsed = _parse_structured(text)
    if parsed is None:
        return {}
    return {str(k).strip().casefold(): v for k, v in parsed.items()}


def _fields_to_results_json(ext: AspectExtraction) -> str:
    """Re-serialize normalized aspects in the prompt's six-field layout."""
    payload = {
        "Problem (keyword/keyphrase)": ext.problem_keyphrase or "N/A",
        "Problem (definition)": ext.problem_definition or "N/A",
        "Problem Discipline": ext.problem_discipline or "N/A",
        "Method (keyword/keyphrase)": ext.method_keyphrase or "N/A",
        "Method (definition)": ext.method_definition or "N/A",
        "Usage": ext.usage or "N/A",
    }
    return ",\n    ".join(f'"{k}": {json.dumps(v, ensure_ascii=False)}'
                          for k, v in payload.items())


def extraction_cache_key(pub: Publication, prompt_version: str, model_id: str) -> str:
    return content_key(pub.title, pub.abstract, prompt_version, model_id)


def extract_aspects(
    pub: Publication,
    client: GenClient,
    prompt_version: str = "v1",
    cache: ExtractionCache | None = None,
    classify: bool = True,
) -> AspectExtraction:
    """Extract the six aspects (and flags) for one publication.

    Unparseable responses yield an all-absent record with an error flag;
    transport failures after retries do the same but are never cached.
    """
    key = extraction_cache_key(pub, prompt_version, client.model_id)
    if cache is not None:
        cached = cache.get(key)
        if cached is not None:
            return replace(AspectExtraction.from_record(cached), pub_id=pub.id)

    template = load_prompt("extract_aspects", prompt_version)
    prompt = render_prompt(template, {"title": pub.title, "abstract": pub.abstract})
    try:
        response = client.generate(prompt, model_id=client.model_id)
    except GenError as exc:
        return AspectExtraction(
            pub_id=pub.id, prompt_version=prompt_version, model_id=client.model_id,
            error=f"generation failed: {exc}",
        )

    fields = _parse_aspect_fields(response)
    ext = AspectExtraction(
        pub_id=pub.id, prompt_version=prompt_version, model_id=client.model_id,
    )
    if not fields:
        ext.error = "unparseable extraction response"
    else:
        lookup = {key.casefold(): key for key in ASPECT_KEYS}
        values = {}
        missing = []
        for folded, original in lookup.items():
            if folded in fields:
                values[original] = _normalize_field(fields[folded])
            else:
                values[original] = None
                missing.append(original)
        ext.problem_keyphrase = values["Problem (keyword/keyphrase)"]
        ext.problem_definition = values["Problem (definition)"]
        ext.problem_discipline = values["Problem Discipline"]
        ext.method_keyphrase = values["Method (keyword/keyphrase)"]
        ext.method_definition = values["Method (definition)"]
        ext.usage = values["Usage"]
        if missing:
            ext.parse_warning = True
        if ext.usage is not None and ext.method_keyphrase is None:
            # Usage describes how a method is applied; without a method
            # keyphrase it cannot stand.
            ext.usage = None
            ext.parse_warning = True

    any_aspect = any([
        ext.problem_keyphrase, ext.problem_definition, ext.problem_discipline,
        ext.method_keyphrase, ext.method_definition, ext.usage,
    ])
    if classify and any_aspect:
        classify_ai4science(pub, ext, client, prompt_version=prompt_version)

    if cache is not None and ext.error is None:
        cache.put(key, ext.to_record())
    return ext


def classify_ai4science(
    pub: Publication,
    extraction: AspectExtraction,
    client: GenClient,
    prompt_version: str = "v1",
) -> tuple[bool, bool]:
    """Ask for the two flags and write them back into the extraction.

    Unparseable responses conservatively yield (False, False) plus an
    error flag.
    """
    template = load_prompt("classify_ai4science", prompt_version)
    prompt = render_prompt(template, {
        "title": pub.title,
        "abstract": pub.abstract,
        "results": _fields_to_results_json(extraction),
    })
    try:
        response = client.generate(prompt, model_id=client.model_id)
    except GenError as exc:
        extraction.is_scientific = False
        extraction.uses_ai = False
        extraction.error = f"classification failed: {exc}"
        return False, False

    parsed = _parse_structured(response)
    flags = None
    if parsed is not None:
        folded = {str(k).strip().casefold(): v for k, v in parsed.items()}
        if "scientific problem" in folded and "ai method" in folded:
            flags = (_coerce_bool(folded["scientific problem"]),
                     _coerce_bool(folded["ai method"]))
    if flags is None or None in flags:
        extraction.is_scientific = False
        extraction.uses_ai = False
        extraction.error = "unparseable classification response"
        return False, False
    extraction.is_scientific, extraction.uses_ai = flags
    return flags


def _coerce_bool(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        folded = value.strip().casefold()
        if folded == "true":
            return True
        if folded == "false":
            return False
    return None


@dataclass
class BatchReport:
    n_total: int = 0
    n_ok: int = 0
    n_failed: int = 0
    failures: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"# batch extraction: {self.n_ok}/{self.n_total} ok, "
                 f"{self.n_failed} failed"]
        for pub_id, reason in self.failures:
            lines.append(f"{pub_id}\t{reason}")
        return "\n".join(lines) + "\n"


class BatchError(ExtractionError):
    def __init__(self, message: str, report: BatchReport):
        super().__init__(message)
        self.report = report


def batch_extract(
    corpus: Corpus,
    client: GenClient,
    parallelism: int = 1,
    prompt_version: str = "v1",
    cache: ExtractionCache | None = None,
    min_success_fraction: float = 0.95,
) -> tuple[ExtractionSet, BatchReport]:
    """Extract every record; output ordering is by pub id regardless of
    completion order, so parallel and serial runs produce identical files.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    pubs = sorted(corpus, key=lambda p: p.id)

    def worker(pub: Publication) -> AspectExtraction:
        return extract_aspects(pub, client, prompt_version=prompt_version, cache=cache)

    if parallelism == 1:
        results = [worker(pub) for pub in pubs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(worker, pubs))

    report = BatchReport(n_total=len(results))
    for ext in results:
        if ext.error is None:
            report.n_ok += 1
        else:
            report.n_failed += 1
            report.failures.append((ext.pub_id, ext.error))
    extraction_set = ExtractionSet(results)
    if report.n_total and report.n_ok / report.n_total < min_success_fraction:
        raise BatchError(
            f"only {report.n_ok}/{report.n_total} extractions succeeded "
            f"(threshold {min_success_fraction})",
            report,
        )
    return extraction_set, report
