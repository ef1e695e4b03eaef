"""Frozen text encoders producing the embedding vectors the simulator
consumes.

Two backends:
  hash:<dim>  deterministic character-trigram feature hashing; no model
              downloads, stable across platforms and processes.
  st:<name>   a sentence-transformers model (e.g.
              st:sentence-transformers/all-MiniLM-L6-v2); requires the
              package and downloaded weights.

Vectors are unit-normalized here and again (idempotently) by the consumer.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Sequence

import numpy as np

from .errors import CollectError

Encoder = Callable[[Sequence[str]], np.ndarray]


def _hash_encode(texts: Sequence[str], dim: int) -> np.ndarray:
    out = np.zeros((len(texts), dim))
    for row, text in enumerate(texts):
        padded = f"\x02{text}\x03"
        for i in range(len(padded) - 2):
            tri = padded[i : i + 3].encode("utf-8")
            digest = hashlib.blake2b(tri, digest_size=8).digest()
            idx = int.from_bytes(digest[:4], "little") % dim
            sign = 1.0 if digest[4] & 1 else -1.0
            out[row, idx] += sign
        norm = np.linalg.norm(out[row])
        if norm == 0.0:
            out[row, 0] = 1.0
        else:
            out[row] /= norm
    return out


def _build_hash_encoder(dim: int) -> Encoder:
    if dim < 1:
        raise CollectError(f"hash encoder dim must be >= 1, got {dim}")
    return lambda texts: _hash_encode(texts, dim)


def _build_sentence_transformer(name: str) -> Encoder:
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as e:
        raise CollectError(
            "sentence-transformers is not installed; install it or use an "
            "offline encoder like 'hash:64'"
        ) from e
    try:
        model = SentenceTransformer(name)
    except Exception as e:
        raise CollectError(
            f"could not load sentence encoder {name!r} (offline?); "
            f"use 'hash:<dim>' for a download-free encoder: {e}"
        ) from e

    def encode(texts: Sequence[str]) -> np.ndarray:
        vecs = np.asarray(model.encode(list(texts), normalize_embeddings=True))
        return vecs.astype(np.float64)

    return encode


def build_encoder(spec: str) -> Encoder:
    """Parse an encoder spec: 'hash:<dim>' or 'st:<model-name>'."""
    kind, _, arg = spec.partition(":")
    if kind == "hash":
        try:
            return _build_hash_encoder(int(arg or "64"))
        except ValueError:
            raise CollectError(f"bad hash encoder dim in {spec!r}") from None
    if kind == "st":
        if not arg:
            raise CollectError("st encoder needs a model name, e.g. st:sentence-transformers/all-MiniLM-L6-v2")
        return _build_sentence_transformer(arg)
    raise CollectError(f"unknown encoder spec {spec!r}; expected hash:<dim> or st:<name>")
