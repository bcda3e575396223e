"""Instruction-conditioned text embeddings for aspects.

Problem and method texts are the keyphrase concatenated with the
definition ("keyphrase, definition"); usage texts are embedded as-is
under the method instruction. Two providers:

* ``HashingProvider`` - offline, deterministic across platforms and
  library versions: every token's vector is derived from SHAKE-256
  bytes of (seed, instruction, token), token vectors are summed and
  L2-normalized. Token overlap then drives cosine similarity, which is
  all the downstream stages need in tests.
* ``RemoteEmbeddingProvider`` - HTTP endpoint taking
  (instruction, text) pairs.

A directory-backed cache wrapper makes any provider idempotent.
"""

from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from ._util import atomic_write_bytes, atomic_write_text, content_key, tokenize
from .extraction import ExtractionSet

INSTRUCTIONS = {
    "problem": ("Represent the keyphrase and definition of a scientific problem "
                "for clustering and visualizing scientific problems"),
    "method": ("Represent the Artificial Intelligence method paragraph for "
               "clustering and visualizing Artificial Intelligence methods"),
    # Usage paragraphs describe how a method is applied, so they share
    # the method-paragraph instruction.
    "usage": ("Represent the Artificial Intelligence method paragraph for "
              "clustering and visualizing Artificial Intelligence methods"),
}

VECTORS_FORMAT = "sciatlas-vectors"
VECTORS_VERSION = 1


class EmbeddingError(Exception):
    """Embedding failed (empty input, transport, dimension mismatch)."""


class EmbeddingProvider(ABC):
    """Maps (instruction, body) pairs to fixed-dimension float vectors."""

    backend: str = "abstract"

    def __init__(self, provider_id: str, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.provider_id = provider_id
        self.dim = dim

    @abstractmethod
    def embed(self, instruction: str, body: str) -> np.ndarray:
        """Return a float32 vector of length `dim`."""

    def embed_batch(self, instruction: str, bodies: list[str]) -> np.ndarray:
        out = np.empty((len(bodies), self.dim), dtype=np.float32)
        for i, body in enumerate(bodies):
            out[i] = self.embed(instruction, body)
        return out


def _hash_unit_floats(seed: int, instruction: str, token: str, dim: int) -> np.ndarray:
    """dim floats in [-1, 1) derived from SHAKE-256 of the inputs.

    Uses the 53-bit mantissa construction (u >> 11) * 2**-53 on little
    endian uint64 words so results never depend on any RNG library.
    """
    shake = hashlib.shake_256(f"{seed}|{instruction}|{token}".encode("utf-8"))
    raw = np.frombuffer(shake.digest(8 * dim), dtype="<u8")
    unit = (raw >> np.uint64(11)) * 2.0**-53
    return (2.0 * unit - 1.0).astype(np.float64)


class HashingProvider(EmbeddingProvider):
    """Deterministic bag-of-tokens embedding for offline runs and tests.

    cos(a, b) grows with token overlap, which preserves the only
    property the pipeline relies on: texts about the same thing land
    near each other.
    """

    backend = "hashing"

    def __init__(self, dim: int = 64, seed: int = 0):
        super().__init__(provider_id=f"hashing-d{dim}-s{seed}", dim=dim)
        self.seed = seed
        self._token_vector = lru_cache(maxsize=65536)(self._token_vector_uncached)

    def _token_vector_uncached(self, instruction: str, token: str) -> np.ndarray:
        return _hash_unit_floats(self.seed, instruction, token, self.dim)

    def embed(self, instruction: str, body: str) -> np.ndarray:
        tokens = tokenize(body)
        if not tokens:
            raise EmbeddingError(f"no tokens to embed in {body!r}")
        total = np.zeros(self.dim, dtype=np.float64)
        for token in tokens:
            total += self._token_vector(instruction, token)
        norm = np.linalg.norm(total)
        if norm == 0.0:
            # Cancellation to the exact zero vector is not reachable with
            # continuous hash coordinates, but guard anyway.
            raise EmbeddingError(f"zero-norm embedding for {body!r}")
        return (total / norm).astype(np.float32)


class RemoteEmbeddingProvider(EmbeddingProvider):
    """Embedding endpoint taking instruction/text pairs.

    POSTs ``{"model": ..., "input": [[instruction, body], ...]}`` to
    ``{base_url}/embeddings`` and expects
    ``{"data": [{"embedding": [...]}, ...]}`` in request order.
    """

    backend = "remote"

    def __init__(
        self,
        base_url: str,
        model_id: str,
        dim: int,
        api_key_env: str = "SCIATLAS_API_KEY",
        timeout: float = 60.0,
    ):
        super().__init__(provider_id=f"remote-{model_id}", dim=dim)
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.timeout = timeout

    def embed(self, instruction: str, body: str) -> np.ndarray:
        return self.embed_batch(instruction, [body])[0]

    def embed_batch(self, instruction: str, bodies: list[str]) -> np.ndarray:
        import os

        import requests

        if not bodies:
            return np.empty((0, self.dim), dtype=np.float32)
        headers = {}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {"model": self.model_id,
                   "input": [[instruction, body] for body in bodies]}
        try:
            resp = requests.post(f"{self.base_url}/embeddings", json=payload,
                                 headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise EmbeddingError(f"embedding request failed: {exc}") from exc
        if resp.status_code != 200:
            raise EmbeddingError(f"embedding endpoint returned HTTP {resp.status_code}")
        try:
            rows = [item["embedding"] for item in resp.json()["data"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbeddingError(f"malformed embedding response: {exc}") from exc
        matrix = np.asarray(rows, dtype=np.float32)
        if matrix.shape != (len(bodies), self.dim):
            raise EmbeddingError(
                f"embedding response shape {matrix.shape} does not match "
                f"expected ({len(bodies)}, {self.dim})")
        return matrix


class CachedEmbeddingProvider(EmbeddingProvider):
    """Directory-backed cache in front of another provider.

    Keys are content hashes of (provider_id, dim, instruction, body);
    values are raw little endian float32 bytes.
    """

    backend = "cached"

    def __init__(self, inner: EmbeddingProvider, cache_dir: str | Path):
        super().__init__(provider_id=inner.provider_id, dim=inner.dim)
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def _path(self, instruction: str, body: str) -> Path:
        key = content_key(self.provider_id, str(self.dim), instruction, body)
        return self.cache_dir / f"{key}.vec"

    def embed(self, instruction: str, body: str) -> np.ndarray:
        path = self._path(instruction, body)
        if path.exists():
            self.hits += 1
            vector = np.frombuffer(path.read_bytes(), dtype="<f4")
            if vector.shape != (self.dim,):
                raise EmbeddingError(f"corrupt cached vector {path}")
            return vector.copy()
        self.misses += 1
        vector = self.inner.embed(instruction, body)
        atomic_write_bytes(path, vector.astype("<f4").tobytes())
        return vector


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str
    instruction_id: str | None = None


def embed_text(provider: EmbeddingProvider, instruction: str, body: str,
               instruction_id: str | None = None) -> EmbeddingVector:
    return EmbeddingVector(values=provider.embed(instruction, body),
                           provider_id=provider.provider_id,
                           instruction_id=instruction_id)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, clipped to [-1, 1].

    Accepts EmbeddingVector or array-likes; zero-norm input is an error
    rather than a silent 0.
    """
    va = np.asarray(a.values if isinstance(a, EmbeddingVector) else a, dtype=np.float64)
    vb = np.asarray(b.values if isinstance(b, EmbeddingVector) else b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vector")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


@dataclass
class AspectVectors:
    """Vectors for one aspect kind, row i belonging to ids[i]."""

    ids: list[str]
    matrix: np.ndarray
    instruction_id: str
    provider_id: str

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.ids):
            raise EmbeddingError("vector matrix does not match id list")

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, pub_id: str) -> np.ndarray:
        return self.matrix[self.ids.index(pub_id)]


@dataclass
class EmbeddingTable:
    problem: AspectVectors
    method: AspectVectors
    usage: AspectVectors


def embed_aspects(extractions: ExtractionSet,
                  provider: EmbeddingProvider) -> EmbeddingTable:
    """Embed problem, method, and usage texts for every record that has them.

    Records missing an aspect are skipped for that aspect; ordering is
    by pub id so output files are stable.
    """
    per_kind: dict[str, tuple[list[str], list[str]]] = {
        "problem": ([], []), "method": ([], []), "usage": ([], []),
    }
    for ext in extractions:
        problem_text = ext.problem_text()
        if problem_text is not None:
            per_kind["problem"][0].append(ext.pub_id)
            per_kind["problem"][1].append(problem_text)
        method_text = ext.method_text()
        if method_text is not None:
            per_kind["method"][0].append(ext.pub_id)
            per_kind["method"][1].append(method_text)
        if ext.usage is not None:
            per_kind["usage"][0].append(ext.pub_id)
            per_kind["usage"][1].append(ext.usage)

    tables = {}
    for kind, (ids, bodies) in per_kind.items():
        instruction = INSTRUCTIONS[kind]
        matrix = provider.embed_batch(instruction, bodies) if bodies \
            else np.empty((0, provider.dim), dtype=np.float32)
        tables[kind] = AspectVectors(ids=ids, matrix=matrix,
                                     instruction_id=kind,
                                     provider_id=provider.provider_id)
    return EmbeddingTable(**tables)


def save_vectors(vectors: AspectVectors, base_path: str | Path) -> None:
    """Write `<base>.vec` (raw little endian float32) plus a JSON manifest."""
    base = Path(base_path)
    matrix = np.ascontiguousarray(vectors.matrix, dtype="<f4")
    atomic_write_bytes(base.with_suffix(".vec"), matrix.tobytes())
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1) if len(matrix) else np.array([])
    manifest = {
        "format": VECTORS_FORMAT,
        "version": VECTORS_VERSION,
        "dim": int(vectors.matrix.shape[1]),
        "count": len(vectors.ids),
        "provider_id": vectors.provider_id,
        "instruction_id": vectors.instruction_id,
        "l2_normalized": bool(len(norms) == 0 or np.allclose(norms, 1.0, atol=1e-3)),
        "ids": vectors.ids,
    }
    atomic_write_text(base.with_suffix(".json"),
                      json.dumps(manifest, sort_keys=True, ensure_ascii=False))


def load_vectors(base_path: str | Path) -> AspectVectors:
    base = Path(base_path)
    try:
        manifest = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise EmbeddingError(f"cannot read vector manifest: {exc}") from exc
    if manifest.get("format") != VECTORS_FORMAT or manifest.get("version") != VECTORS_VERSION:
        raise EmbeddingError(f"{base} is not a v{VECTORS_VERSION} vector file")
    dim = manifest["dim"]
    count = manifest["count"]
    raw = base.with_suffix(".vec").read_bytes()
    matrix = np.frombuffer(raw, dtype="<f4")
    if matrix.size != dim * count:
        raise EmbeddingError(
            f"vector payload holds {matrix.size} floats, expected {dim * count}")
    return AspectVectors(
        ids=list(manifest["ids"]),
        matrix=matrix.reshape(count, dim).copy(),
        instruction_id=manifest["instruction_id"],
        provider_id=manifest["provider_id"],
    )
