"""Causal-LM loading.

Model specs:
  tiny-random:gpt2[?n_layer=2&n_embd=32&n_head=2]
      a randomly initialized GPT-2-architecture model over the byte
      tokenizer; seed-deterministic, no downloads.
  <hub-id>
      any hub identifier loadable by AutoModelForCausalLM (needs network
      or a local cache, plus its own tokenizer).
"""

from __future__ import annotations

from urllib.parse import parse_qsl

import torch

from .errors import CollectError
from .tokenizer import ByteTokenizer


def _tiny_random(arch_and_args: str, max_seq_len: int, seed: int):
    arch, _, query = arch_and_args.partition("?")
    if arch != "gpt2":
        raise CollectError(f"tiny-random supports the gpt2 architecture, got {arch!r}")
    args = dict(parse_qsl(query))
    try:
        n_layer = int(args.pop("n_layer", 2))
        n_embd = int(args.pop("n_embd", 32))
        n_head = int(args.pop("n_head", 2))
    except ValueError:
        raise CollectError(f"non-integer tiny-random argument in {arch_and_args!r}") from None
    if args:
        raise CollectError(f"unknown tiny-random arguments: {sorted(args)}")
    from transformers import GPT2Config, GPT2LMHeadModel

    tokenizer = ByteTokenizer()
    config = GPT2Config(
        vocab_size=tokenizer.vocab_size,
        n_positions=max_seq_len,
        n_embd=n_embd,
        n_layer=n_layer,
        n_head=n_head,
        bos_token_id=tokenizer.bos_id,
        eos_token_id=tokenizer.eos_id,
    )
    torch.manual_seed(seed)
    model = GPT2LMHeadModel(config)
    return model, tokenizer


class _HubTokenizer:
    """Adapter exposing the byte-tokenizer interface over a hub tokenizer."""

    def __init__(self, tok):
        self._tok = tok
        self.vocab_size = tok.vocab_size
        self.bos_id = tok.bos_token_id if tok.bos_token_id is not None else tok.eos_token_id
        self.eos_id = tok.eos_token_id

    def encode(self, text: str) -> list[int]:
        return self._tok.encode(text, add_special_tokens=False)

    def decode(self, ids: list[int]) -> str:
        return self._tok.decode(ids, skip_special_tokens=True)


def load_model(spec: str, max_seq_len: int, seed: int):
    """Build (model, tokenizer) from a model spec; model is in train mode
    on CPU with gradients enabled."""
    if spec.startswith("tiny-random:"):
        model, tokenizer = _tiny_random(spec.split(":", 1)[1], max_seq_len, seed)
    else:
        try:
            from transformers import AutoModelForCausalLM, AutoTokenizer

            model = AutoModelForCausalLM.from_pretrained(spec)
            tokenizer = _HubTokenizer(AutoTokenizer.from_pretrained(spec))
        except Exception as e:
            raise CollectError(
                f"model load failure for {spec!r} (offline, bad id, or missing "
                f"weights); 'tiny-random:gpt2' runs without downloads: {e}"
            ) from e
    model.train()
    return model, tokenizer
