"""Record causal-LM fine-tuning dynamics (per-step test metrics, frozen
embeddings, per-checkpoint gradient dot products) in the simulator
toolkit's JSONL formats."""

from .collect import CollectConfig, collect
from .encoders import build_encoder
from .errors import CollectError
from .genmetrics import rouge_l_f1, sentence_bleu
from .lm import load_model
from .textdata import TextExample, load_text_dataset
from .tokenizer import ByteTokenizer

__version__ = "0.1.0"
