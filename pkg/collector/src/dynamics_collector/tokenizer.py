"""Byte-level tokenizer needing no vocabulary files.

Ids 0..255 are raw UTF-8 bytes; 256 is BOS, 257 is EOS. Works with any
randomly initialized causal LM config and keeps the collector runnable
without hub downloads.
"""

from __future__ import annotations


class ByteTokenizer:
    vocab_size = 258
    bos_id = 256
    eos_id = 257

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode(self, ids: list[int]) -> str:
        return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")
