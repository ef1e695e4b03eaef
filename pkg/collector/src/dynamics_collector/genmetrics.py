"""Generation scoring and sampling.

BLEU is smoothed sentence BLEU (up to 4-grams, add-1 counts) on a 0..100
scale; ROUGE-L is the LCS F1 in 0..1. Tokens are whitespace splits of the
decoded strings. Sampling is nucleus sampling with temperature, driven by
an explicit torch generator for reproducibility.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

import torch


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU on a 0..100 scale.

    Effective-order geometric mean of n-gram precisions: unigrams are
    unsmoothed (no unigram overlap means zero), higher orders get add-1
    smoothing; orders longer than the candidate are skipped.
    """
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        return 0.0
    log_precisions = []
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(cand, n)
        ref_counts = _ngrams(ref, n)
        total = sum(cand_counts.values())
        if total == 0:
            break
        clipped = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        if n == 1:
            if clipped == 0:
                return 0.0
            log_precisions.append(math.log(clipped / total))
        else:
            log_precisions.append(math.log((clipped + 1) / (total + 1)))
    brevity = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return 100.0 * brevity * math.exp(sum(log_precisions) / len(log_precisions))


def rouge_l_f1(candidate: str, reference: str) -> float:
    """LCS-based F1 in 0..1."""
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        return 0.0
    prev = [0] * (len(ref) + 1)
    for a in cand:
        cur = [0] * (len(ref) + 1)
        for j, b in enumerate(ref, start=1):
            cur[j] = prev[j - 1] + 1 if a == b else max(prev[j], cur[j - 1])
        prev = cur
    lcs = prev[-1]
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


@torch.no_grad()
def sample_generate(
    model,
    prefix_ids: list[int],
    eos_id: int,
    max_new_tokens: int,
    temperature: float,
    top_p: float,
    generator: torch.Generator,
    device: str = "cpu",
) -> list[int]:
    """Nucleus sampling continuation of ``prefix_ids``; returns new ids."""
    ids = torch.tensor([prefix_ids], dtype=torch.long, device=device)
    out: list[int] = []
    max_pos = getattr(model.config, "n_positions", None) or getattr(
        model.config, "max_position_embeddings", 1024
    )
    for _ in range(max_new_tokens):
        if ids.shape[1] >= max_pos:
            break
        logits = model(ids).logits[0, -1]
        logits = logits / max(temperature, 1e-6)
        probs = torch.softmax(logits, dim=-1)
        sorted_probs, sorted_idx = torch.sort(probs, descending=True)
        cumulative = torch.cumsum(sorted_probs, dim=-1)
        keep = cumulative - sorted_probs < top_p  # always keeps the top token
        kept = sorted_probs * keep
        kept = kept / kept.sum()
        choice = torch.multinomial(kept, 1, generator=generator)
        token = int(sorted_idx[choice])
        if token == eos_id:
            break
        out.append(token)
        ids = torch.cat([ids, torch.tensor([[token]], device=device)], dim=1)
    return out
