"""Prompt tokenization, frozen token embedding, Token2Vector and the prompt-vector store.

The frozen language model is replaced by an :class:`EmbedderSpec`: a seeded
hash embedder (default), a fixed lookup table, or a remote service. Only the
Token2Vector stage carries learnable weights.
"""
from __future__ import annotations

import hashlib
import json
import re
import struct
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numkernel as nk
from .errors import ConfigError, ParseError, ServiceError, ShapeMismatch, StaleCache

DEFAULT_L_MAX = 128
DEFAULT_TOKEN_DIM = 64

_TOKEN_RE = re.compile(r"->|\w+|[^\w\s]", re.UNICODE)


def prompt_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PromptRecord:
    variable_id: str
    text: str
    hash: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"empty prompt for variable {self.variable_id!r}")
        digest = prompt_hash(self.text)
        if self.hash and self.hash != digest:
            raise ValueError(f"hash mismatch for variable {self.variable_id!r}")
        object.__setattr__(self, "hash", digest)


# ----------------------------------------------------------------------------
# tokenizer


class Vocabulary:
    """Token -> id map grown on first sight; ids are assigned in encounter order.

    Id 0 is reserved for unknown tokens once the vocabulary is frozen.
    """

    UNK = "<unk>"

    def __init__(self, tokens: Sequence[str] = (), frozen: bool = False):
        self._ids: dict[str, int] = {self.UNK: 0}
        for tok in tokens:
            if tok != self.UNK:
                self._ids.setdefault(tok, len(self._ids))
        self.frozen = frozen

    def __len__(self):
        return len(self._ids)

    def __contains__(self, token):
        return token in self._ids

    def id(self, token: str) -> int:
        got = self._ids.get(token)
        if got is not None:
            return got
        if self.frozen:
            return 0
        self._ids[token] = len(self._ids)
        return self._ids[token]

    def tokens(self) -> list[str]:
        return sorted(self._ids, key=self._ids.__getitem__)

    def to_json(self) -> str:
        return json.dumps(self.tokens(), ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str, frozen: bool = True) -> "Vocabulary":
        tokens = json.loads(text)
        if not tokens or tokens[0] != cls.UNK:
            raise ParseError("vocabulary must start with the unknown token")
        return cls(tokens[1:], frozen=frozen)

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path, frozen: bool = True) -> "Vocabulary":
        return cls.from_json(Path(path).read_text(encoding="utf-8"), frozen=frozen)


def split_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def tokenize(text: str, l_max: int, vocab: Vocabulary | None = None) -> list[int]:
    """Whitespace/punctuation tokenization mapped through ``vocab``, truncated to the first ``l_max`` tokens."""
    if l_max < 1:
        raise ConfigError("l_max must be >= 1")
    vocab = vocab if vocab is not None else Vocabulary()
    return [vocab.id(tok) for tok in split_tokens(text)[:l_max]]


# ----------------------------------------------------------------------------
# frozen token embedding


@dataclass
class EmbedderSpec:
    kind: str = "deterministic-hash"
    dim: int = DEFAULT_TOKEN_DIM
    seed: int = 0
    table: np.ndarray | None = None
    endpoint: str | None = None
    retries: int = 2
    timeout: float = 5.0
    backoff: float = 0.1

    def __post_init__(self):
        if self.kind not in ("deterministic-hash", "lookup-table", "external-service"):
            raise ConfigError(f"unknown embedder kind {self.kind!r}")
        if self.dim <= 0:
            raise ConfigError("embedding dimension must be positive")
        if self.kind == "lookup-table":
            if self.table is None or self.table.ndim != 2 or self.table.shape[1] != self.dim:
                raise ConfigError("lookup-table embedder needs a (vocab, dim) table")
        if self.kind == "external-service" and not self.endpoint:
            raise ConfigError("external-service embedder needs an endpoint")


@dataclass
class TokenEmbedding:
    tokens: list[int]
    matrix: np.ndarray  # (l_max, D)

    @property
    def length(self) -> int:
        return len(self.tokens)


def hash_vector(token_id: int, dim: int, seed: int = 0) -> np.ndarray:
    """Unit-norm pseudorandom vector keyed by (seed, token_id); PCG64 is platform-stable."""
    v = np.random.default_rng([seed, token_id]).standard_normal(dim)
    return v / np.linalg.norm(v)


def _request_service(spec: EmbedderSpec, tokens: list[int]) -> np.ndarray:
    body = json.dumps({"tokens": tokens, "dim": spec.dim}).encode("utf-8")
    last = None
    for attempt in range(spec.retries + 1):
        req = urllib.request.Request(spec.endpoint, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=spec.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            rows = np.asarray(payload["embedding"], dtype=np.float64)
            if rows.shape != (len(tokens), spec.dim):
                raise ServiceError(f"service returned shape {rows.shape}, expected {(len(tokens), spec.dim)}")
            return rows
        except (urllib.error.URLError, OSError, KeyError, ValueError) as exc:
            last = exc
            if attempt < spec.retries:
                time.sleep(spec.backoff * (2 ** attempt))
    raise ServiceError(f"embedding service {spec.endpoint} failed after {spec.retries + 1} attempts: {last}")


def embed_tokens(spec: EmbedderSpec, tokens: Sequence[int], l_max: int) -> TokenEmbedding:
    tokens = list(tokens)
    if len(tokens) > l_max:
        raise ShapeMismatch(f"{len(tokens)} tokens exceed l_max={l_max}")
    matrix = np.zeros((l_max, spec.dim))
    if tokens:
        if spec.kind == "deterministic-hash":
            cache: dict[int, np.ndarray] = {}
            for i, t in enumerate(tokens):
                if t not in cache:
                    cache[t] = hash_vector(t, spec.dim, spec.seed)
                matrix[i] = cache[t]
        elif spec.kind == "lookup-table":
            idx = np.asarray(tokens)
            if idx.max() >= spec.table.shape[0]:
                raise ShapeMismatch("token id outside lookup table")
            matrix[: len(tokens)] = spec.table[idx]
        else:
            matrix[: len(tokens)] = _request_service(spec, tokens)
    return TokenEmbedding(tokens, matrix)


def embed_prompts(records: Sequence[PromptRecord], spec: EmbedderSpec, l_max: int,
                  vocab: Vocabulary) -> np.ndarray:
    """Stack token embeddings of ``records`` into an (N, l_max, D) array."""
    out = np.zeros((len(records), l_max, spec.dim))
    for i, rec in enumerate(records):
        out[i] = embed_tokens(spec, tokenize(rec.text, l_max, vocab), l_max).matrix
    return out


# ----------------------------------------------------------------------------
# Token2Vector


@dataclass
class Token2VectorParams:
    w_pool: nk.Tensor  # (l_max, 1)
    b_pool: nk.Tensor  # (D,)
    w_proj: nk.Tensor  # (D, d)
    b_proj: nk.Tensor  # (d,)

    @classmethod
    def init(cls, l_max: int, dim_in: int, dim_out: int, rng: np.random.Generator) -> "Token2VectorParams":
        return cls(
            w_pool=nk.Tensor(rng.normal(0.0, 1.0 / np.sqrt(l_max), size=(l_max, 1)), requires_grad=True),
            b_pool=nk.Tensor(np.zeros(dim_in), requires_grad=True),
            w_proj=nk.Tensor(rng.normal(0.0, 1.0 / np.sqrt(dim_in), size=(dim_in, dim_out)), requires_grad=True),
            b_proj=nk.Tensor(np.zeros(dim_out), requires_grad=True),
        )

    @property
    def l_max(self) -> int:
        return self.w_pool.shape[0]

    @property
    def dim_in(self) -> int:
        return self.w_proj.shape[0]

    @property
    def dim_out(self) -> int:
        return self.w_proj.shape[1]

    def named(self, prefix: str = "") -> dict[str, nk.Tensor]:
        return {prefix + k: getattr(self, k) for k in ("w_pool", "b_pool", "w_proj", "b_proj")}


ACTIVATIONS: dict[str, Callable] = {"gelu": nk.gelu, "identity": nk.identity}


def token2vector(matrix, params: Token2VectorParams, activation: str | Callable = "gelu") -> nk.Tensor:
    """Pool token rows with learnable weights, activate, then project D -> d.

    :param matrix: token embeddings, shape (l_max, D) or (N, l_max, D)
    :return: shape (d,) or (N, d)
    """
    act = ACTIVATIONS[activation] if isinstance(activation, str) else activation
    m = nk.as_tensor(matrix)
    if m.shape[-2:] != (params.l_max, params.dim_in):
        raise ShapeMismatch(f"token matrix {m.shape} does not match (l_max={params.l_max}, D={params.dim_in})")
    single = m.ndim == 2
    if single:
        m = nk.reshape(m, (1,) + m.shape)
    pooled = nk.matmul(nk.transpose_last2(params.w_pool), m)  # (N, 1, D)
    pooled = nk.reshape(pooled, (m.shape[0], params.dim_in))
    out = nk.linear(act(nk.add(pooled, params.b_pool)), params.w_proj, params.b_proj)
    if single:
        out = nk.reshape(out, (params.dim_out,))
    return out


# ----------------------------------------------------------------------------
# on-disk store
#
# b"TMKG" | u32 version | u32 N | u32 d, then N records of
# u32 id_len | id (UTF-8) | 32-byte SHA-256 of the prompt | d float64 values

STORE_MAGIC = b"TMKG"
STORE_VERSION = 1


@dataclass
class EmbeddingStore:
    variable_ids: list[str]
    hashes: list[str]
    matrix: np.ndarray  # (N, d)
    extra: dict = field(default_factory=dict)

    def vector(self, variable_id: str) -> np.ndarray:
        return self.matrix[self.variable_ids.index(variable_id)]

    def stale(self, prompts: Sequence[PromptRecord]) -> list[str]:
        """Variable ids whose current prompt hash differs from the stored one (or that are missing)."""
        stored = dict(zip(self.variable_ids, self.hashes))
        return [p.variable_id for p in prompts if stored.get(p.variable_id) != p.hash]


def write_store(store: EmbeddingStore, path):
    if store.matrix.ndim != 2 or store.matrix.shape[0] != len(store.variable_ids):
        raise ShapeMismatch(f"store matrix {store.matrix.shape} vs {len(store.variable_ids)} variables")
    n, d = store.matrix.shape
    blob = bytearray(STORE_MAGIC + struct.pack("<III", STORE_VERSION, n, d))
    for vid, h, row in zip(store.variable_ids, store.hashes, store.matrix):
        key = vid.encode("utf-8")
        blob += struct.pack("<I", len(key)) + key + bytes.fromhex(h)
        blob += np.asarray(row, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def build_prompt_store(prompts: Sequence[PromptRecord], spec: EmbedderSpec, params: Token2VectorParams,
                       path, vocab: Vocabulary | None = None, activation: str = "gelu") -> EmbeddingStore:
    """Embed every prompt through Token2Vector and persist the (N, d) result at ``path``."""
    vocab = vocab if vocab is not None else Vocabulary()
    if prompts:
        tokens = embed_prompts(prompts, spec, params.l_max, vocab)
        with nk.no_grad():
            matrix = token2vector(tokens, params, activation).data.copy()
    else:
        matrix = np.zeros((0, params.dim_out))
    store = EmbeddingStore([p.variable_id for p in prompts], [p.hash for p in prompts], matrix)
    write_store(store, path)
    return store


def load_prompt_store(path, prompts: Sequence[PromptRecord] | None = None,
                      expected_dim: int | None = None) -> EmbeddingStore:
    """Read a store; with ``prompts`` given, raise :class:`StaleCache` naming every outdated variable."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != STORE_MAGIC:
        raise ParseError(f"{path}: not a prompt store")
    version, n, d = struct.unpack_from("<III", raw, 4)
    if version != STORE_VERSION:
        raise ParseError(f"{path}: unsupported store version {version}")
    pos = 16
    ids, hashes = [], []
    matrix = np.zeros((n, d))
    try:
        for i in range(n):
            (klen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            ids.append(raw[pos:pos + klen].decode("utf-8"))
            pos += klen
            hashes.append(raw[pos:pos + 32].hex())
            pos += 32
            matrix[i] = np.frombuffer(raw, dtype="<f8", count=d, offset=pos)
            pos += 8 * d
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated store ({exc})") from None
    if pos != len(raw):
        raise ParseError(f"{path}: {len(raw) - pos} trailing bytes")
    if expected_dim is not None and d != expected_dim:
        raise ShapeMismatch(f"store dimension {d} != expected {expected_dim}")
    store = EmbeddingStore(ids, hashes, matrix)
    if prompts is not None:
        stale = store.stale(prompts)
        if stale:
            raise StaleCache(f"prompts changed since embedding for: {', '.join(stale)}; re-run embedding", stale)
    return store


def prompt_records(texts: Mapping[str, str]) -> list[PromptRecord]:
    return [PromptRecord(k, v) for k, v in texts.items()]
