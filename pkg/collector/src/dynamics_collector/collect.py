"""Record one causal-LM fine-tuning run as consumable dynamics files.

Per invocation: sample a training subset, fine-tune with AdamW (linear
decay), record each test example's post-update loss per step (and sampled
BLEU / ROUGE-L for generation tasks), dump exact per-example gradient dot
products at evenly spaced parameter states, and export runs, embeddings,
and dumps in the simulator toolkit's JSONL formats. Everything is
self-checked against those schemas before writing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .encoders import build_encoder
from .errors import CollectError
from .genmetrics import rouge_l_f1, sample_generate, sentence_bleu
from .lm import load_model
from .textdata import TextExample, load_text_dataset

METRIC_RANGES = {"loss": (0.0, None), "bleu": (0.0, 100.0), "rouge_l": (0.0, 1.0)}


@dataclass(frozen=True)
class CollectConfig:
    """One recorded run. Optimizer defaults mirror the small-model
    fine-tuning recipe (AdamW, beta 0.9/0.999, eps 1e-6, weight decay
    1e-3, linear decay, no warmup, batches of 4, 96 steps)."""

    train_path: str
    test_path: str
    out_dir: str
    run_id: str = "run_000"
    model: str = "tiny-random:gpt2"
    encoder: str = "st:sentence-transformers/all-MiniLM-L6-v2"
    per_run: int = 128
    num_steps: int = 96
    batch_size: int = 4
    learning_rate: float = 5e-7
    weight_decay: float = 1e-3
    adam_eps: float = 1e-6
    max_seq_len: int = 2048
    seed: int = 42
    checkpoints: int = 10
    eval_interval: int = 1
    max_new_tokens: int = 24
    temperature: float = 0.2
    top_p: float = 0.95
    device: str = "cpu"
    tags: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.num_steps < 1 or self.batch_size < 1 or self.per_run < 1:
            raise CollectError("num_steps, batch_size, per_run must be >= 1")
        if self.eval_interval < 1:
            raise CollectError("eval_interval must be >= 1")
        if self.checkpoints < 0:
            raise CollectError("checkpoints must be >= 0")
        if self.learning_rate <= 0:
            raise CollectError("learning_rate must be > 0")


def _json_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n"


def _encode_example(ex: TextExample, tokenizer, max_len: int):
    """Token ids and label mask: loss is taken over the target span only."""
    prompt_ids = [tokenizer.bos_id] + tokenizer.encode(ex.prompt)
    target_ids = tokenizer.encode(ex.target) + [tokenizer.eos_id]
    ids = (prompt_ids + target_ids)[:max_len]
    labels = ([-100] * len(prompt_ids) + target_ids)[:max_len]
    if sum(1 for t in labels if t != -100) == 0:
        raise CollectError(
            f"example {ex.ex_id!r}: target fully truncated at max_seq_len={max_len}"
        )
    return ids, labels


def _batch_tensors(encoded, device):
    maxlen = max(len(ids) for ids, _ in encoded)
    input_ids = torch.zeros((len(encoded), maxlen), dtype=torch.long, device=device)
    labels = torch.full((len(encoded), maxlen), -100, dtype=torch.long, device=device)
    attention = torch.zeros((len(encoded), maxlen), dtype=torch.long, device=device)
    for i, (ids, labs) in enumerate(encoded):
        input_ids[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        labels[i, : len(labs)] = torch.tensor(labs, dtype=torch.long)
        attention[i, : len(ids)] = 1
    return input_ids, labels, attention


def _per_example_losses(model, encoded, device) -> torch.Tensor:
    """Mean-token cross entropy per example (target tokens only)."""
    input_ids, labels, attention = _batch_tensors(encoded, device)
    logits = model(input_ids, attention_mask=attention).logits
    shift_logits = logits[:, :-1]
    shift_labels = labels[:, 1:]
    flat = torch.nn.functional.cross_entropy(
        shift_logits.reshape(-1, shift_logits.shape[-1]),
        shift_labels.reshape(-1),
        ignore_index=-100,
        reduction="none",
    ).reshape(shift_labels.shape)
    mask = (shift_labels != -100).float()
    return (flat * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)


def _flat_grad(model) -> np.ndarray:
    chunks = []
    for p in model.parameters():
        if p.grad is None:
            chunks.append(np.zeros(p.numel()))
        else:
            chunks.append(p.grad.detach().cpu().double().numpy().ravel())
    return np.concatenate(chunks)


def _checkpoint_states(num_steps: int, n_checkpoints: int) -> list[int]:
    """Evenly spaced parameter states over 0..num_steps inclusive."""
    if n_checkpoints == 0:
        return []
    if n_checkpoints == 1:
        return [num_steps]  # final trained model
    raw = np.linspace(0, num_steps, n_checkpoints)
    states = sorted({int(round(s)) for s in raw})
    if len(states) != n_checkpoints:
        raise CollectError(
            f"cannot place {n_checkpoints} distinct checkpoints over {num_steps} steps"
        )
    return states


def _validate_run_obj(obj, num_steps: int) -> None:
    """Schema self-check before writing (lengths, ranges, contiguity)."""
    assert obj["run_id"], "empty run_id"
    for i, step in enumerate(obj["steps"]):
        if step["step"] != i + 1 or not step["batch"]:
            raise CollectError(f"run {obj['run_id']}: bad step record at position {i}")
    if not obj["trajectories"]:
        raise CollectError(f"run {obj['run_id']}: no trajectories")
    train_ids = {ex for s in obj["steps"] for ex in s["batch"]}
    for t in obj["trajectories"]:
        if len(t["values"]) != len(obj["steps"]):
            raise CollectError(
                f"run {obj['run_id']}: trajectory ({t['test_id']}, {t['metric']}) "
                f"has {len(t['values'])} values for {len(obj['steps'])} steps"
            )
        if t["test_id"] in train_ids:
            raise CollectError(f"run {obj['run_id']}: id {t['test_id']!r} has both roles")
        lo, hi = METRIC_RANGES.get(t["metric"], (None, None))
        for v in t["values"]:
            if not math.isfinite(v):
                raise CollectError(f"run {obj['run_id']}: non-finite {t['metric']} value")
            if (lo is not None and v < lo) or (hi is not None and v > hi):
                raise CollectError(
                    f"run {obj['run_id']}: {t['metric']} value {v} outside range"
                )
    _ = num_steps


def collect(cfg: CollectConfig) -> dict[str, Path]:
    """Run the recording loop; returns the written file paths."""
    train_pool = load_text_dataset(cfg.train_path)
    test_pool = load_text_dataset(cfg.test_path)
    overlap = {e.ex_id for e in train_pool} & {e.ex_id for e in test_pool}
    if overlap:
        raise CollectError(f"ids appear in both train and test: {sorted(overlap)[:5]}")
    if cfg.per_run > len(train_pool):
        raise CollectError(f"per_run {cfg.per_run} exceeds train pool {len(train_pool)}")
    generation_task = test_pool[0].is_generation_task

    model, tokenizer = load_model(cfg.model, cfg.max_seq_len, cfg.seed)
    device = cfg.device
    try:
        model.to(device)
    except RuntimeError as e:
        raise CollectError(f"could not move model to {device!r}: {e}") from None

    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0)))
    subset_idx = np.sort(rng.choice(len(train_pool), size=cfg.per_run, replace=False))
    subset = [train_pool[i] for i in subset_idx]
    by_id = {e.ex_id: e for e in subset}
    needed = cfg.num_steps * cfg.batch_size
    order: list[str] = []
    while len(order) < needed:
        order.extend(subset[i].ex_id for i in rng.permutation(len(subset)))
    batches = [
        order[t * cfg.batch_size : (t + 1) * cfg.batch_size] for t in range(cfg.num_steps)
    ]

    encoded_train = {e.ex_id: _encode_example(e, tokenizer, cfg.max_seq_len) for e in subset}
    encoded_test = [_encode_example(e, tokenizer, cfg.max_seq_len) for e in test_pool]

    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=(0.9, 0.999),
        eps=cfg.adam_eps,
        weight_decay=cfg.weight_decay,
    )

    def lr_at(step: int) -> float:
        # linear decay, no warmup; never reaches zero within the run
        return cfg.learning_rate * (1.0 - (step - 1) / cfg.num_steps)

    ckpt_states = _checkpoint_states(cfg.num_steps, cfg.checkpoints)
    gen_rng = torch.Generator(device="cpu").manual_seed(cfg.seed)

    def dump_checkpoint(state: int) -> dict:
        was_training = model.training
        model.eval()
        grads: dict[str, np.ndarray] = {}
        for ex_id, enc in encoded_train.items():
            model.zero_grad(set_to_none=True)
            _per_example_losses(model, [enc], device)[0].backward()
            grads[ex_id] = _flat_grad(model)
        test_grads = []
        for enc in encoded_test:
            model.zero_grad(set_to_none=True)
            _per_example_losses(model, [enc], device)[0].backward()
            test_grads.append(_flat_grad(model))
        model.zero_grad(set_to_none=True)
        if was_training:
            model.train()
        train_ids = list(grads)
        gmat = np.stack([grads[ex] for ex in train_ids])
        tmat = np.stack(test_grads)
        dots = gmat @ tmat.T
        records = []
        for i, ex_id in enumerate(train_ids):
            for j, te in enumerate(test_pool):
                records.append({"train": ex_id, "test": te.ex_id, "v": float(dots[i, j])})
            records.append({"train": ex_id, "test": ex_id, "v": float(gmat[i] @ gmat[i])})
        lr = lr_at(min(state + 1, cfg.num_steps))
        return {"step": state, "lr": lr, "dots": records}

    checkpoints: list[dict] = []
    losses = np.empty((len(test_pool), cfg.num_steps))
    gen_steps: list[int] = []
    bleu_vals: list[list[float]] = []
    rouge_vals: list[list[float]] = []

    for t in range(1, cfg.num_steps + 1):
        if (t - 1) in ckpt_states:
            checkpoints.append(dump_checkpoint(t - 1))
        batch_enc = [encoded_train[ex] for ex in batches[t - 1]]
        optimizer.zero_grad(set_to_none=True)
        for group in optimizer.param_groups:
            group["lr"] = lr_at(t)
        loss = _per_example_losses(model, batch_enc, device).mean()
        if not torch.isfinite(loss):
            raise CollectError(f"run {cfg.run_id}: non-finite training loss at step {t}")
        loss.backward()
        optimizer.step()

        model.eval()  # dropout off: recorded losses are the deterministic metric
        with torch.no_grad():
            step_losses = _per_example_losses(model, encoded_test, device)
        model.train()
        if not torch.isfinite(step_losses).all() or float(step_losses.max()) > 1e6:
            raise CollectError(
                f"run {cfg.run_id}: test loss diverged at step {t} "
                f"(max {float(step_losses.max()):.3g}); lower the learning rate"
            )
        losses[:, t - 1] = step_losses.cpu().double().numpy()

        if generation_task and t % cfg.eval_interval == 0:
            model.eval()
            bleu_row, rouge_row = [], []
            for te in test_pool:
                prefix = [tokenizer.bos_id] + tokenizer.encode(te.prompt)
                prefix = prefix[: cfg.max_seq_len - cfg.max_new_tokens]
                new_ids = sample_generate(
                    model, prefix, tokenizer.eos_id, cfg.max_new_tokens,
                    cfg.temperature, cfg.top_p, gen_rng, device,
                )
                text = tokenizer.decode(new_ids)
                bleu_row.append(sentence_bleu(text, te.target))
                rouge_row.append(rouge_l_f1(text, te.target))
            model.train()
            gen_steps.append(t)
            bleu_vals.append(bleu_row)
            rouge_vals.append(rouge_row)

    if ckpt_states and ckpt_states[-1] == cfg.num_steps:
        checkpoints.append(dump_checkpoint(cfg.num_steps))

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    tags = {"source": "collector", "model": cfg.model, **cfg.tags}
    steps_obj = [
        {"step": t, "batch": list(batch)} for t, batch in enumerate(batches, start=1)
    ]
    trajectories = [
        {"test_id": te.ex_id, "metric": "loss", "values": [float(v) for v in losses[j]]}
        for j, te in enumerate(test_pool)
    ]
    if generation_task and cfg.eval_interval == 1:
        for name, table in (("bleu", bleu_vals), ("rouge_l", rouge_vals)):
            trajectories.extend(
                {
                    "test_id": te.ex_id,
                    "metric": name,
                    "values": [float(row[j]) for row in table],
                }
                for j, te in enumerate(test_pool)
            )
    run_obj = {
        "run_id": cfg.run_id,
        "tags": tags,
        "steps": steps_obj,
        "trajectories": trajectories,
    }
    _validate_run_obj(run_obj, cfg.num_steps)
    run_path = out / "runs" / f"{cfg.run_id}.jsonl"
    run_path.parent.mkdir(parents=True, exist_ok=True)
    run_path.write_text(_json_line(run_obj), encoding="utf-8")
    written["run"] = run_path

    if generation_task and cfg.eval_interval > 1 and gen_steps:
        # coarser generation dynamics: one merged batch per evaluated window
        merged_steps = []
        for i, t in enumerate(gen_steps):
            lo = gen_steps[i - 1] if i else 0
            window: list[str] = []
            seen: set[str] = set()
            for bt in range(lo, t):
                for ex in batches[bt]:
                    if ex not in seen:
                        seen.add(ex)
                        window.append(ex)
            merged_steps.append({"step": i + 1, "batch": window})
        gen_obj = {
            "run_id": cfg.run_id,
            "tags": {**tags, "eval_interval": cfg.eval_interval},
            "steps": merged_steps,
            "trajectories": [
                {
                    "test_id": te.ex_id,
                    "metric": name,
                    "values": [float(row[j]) for row in table],
                }
                for name, table in (("bleu", bleu_vals), ("rouge_l", rouge_vals))
                for j, te in enumerate(test_pool)
            ],
        }
        _validate_run_obj(gen_obj, len(gen_steps))
        gen_path = out / "runs_gen" / f"{cfg.run_id}.jsonl"
        gen_path.parent.mkdir(parents=True, exist_ok=True)
        gen_path.write_text(_json_line(gen_obj), encoding="utf-8")
        written["run_gen"] = gen_path

    encoder = build_encoder(cfg.encoder)
    texts = [e.full_text for e in train_pool] + [e.full_text for e in test_pool]
    ids = [e.ex_id for e in train_pool] + [e.ex_id for e in test_pool]
    vecs = encoder(texts)
    if vecs.shape != (len(ids), vecs.shape[1]) or not np.all(np.isfinite(vecs)):
        raise CollectError("encoder returned a malformed embedding matrix")
    emb_path = out / "embeddings.jsonl"
    with open(emb_path, "w", encoding="utf-8") as fh:
        fh.write(_json_line({"dim": int(vecs.shape[1])}))
        for ex_id, vec in zip(ids, vecs):
            fh.write(_json_line({"id": ex_id, "vec": [float(v) for v in vec]}))
    written["embeddings"] = emb_path

    if checkpoints:
        steps_seen = [c["step"] for c in checkpoints]
        if steps_seen != sorted(set(steps_seen)):
            raise CollectError(f"checkpoint steps not strictly increasing: {steps_seen}")
        dump_path = out / "dumps" / f"{cfg.run_id}.jsonl"
        dump_path.parent.mkdir(parents=True, exist_ok=True)
        with open(dump_path, "w", encoding="utf-8") as fh:
            fh.write(_json_line({"format": "gradient-dump-v1"}))
            for c in checkpoints:
                fh.write(_json_line(c))
        written["dump"] = dump_path

    return written
