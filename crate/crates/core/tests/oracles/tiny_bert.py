"""Writes a tiny random BERT in Hugging Face layout plus reference outputs.

Usage: python tiny_bert.py OUT_DIR
"""
import json
import sys
from pathlib import Path

import torch
from transformers import BertConfig, BertModel, BertTokenizer

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "i", "want", "a", "table", "for", "at", "six", "in", "the", "even", "##ing",
    "world", "go", "##ur", "##met", "un", "##aff", "##able", ",", ".", "4", "san", "jose",
]

TEXTS = [
    "I want a table for 4 at six in the evening.",
    "World Gourmet, San Jose",
    "unaffable gourmets",
]

SEQUENCES = [
    ([2, 5, 6, 7, 8, 9, 25, 10, 11, 12, 13, 14, 15, 24, 3], [0] * 8 + [1] * 7, [1] * 15),
    ([2, 16, 17, 18, 19, 3, 26, 27, 3, 0, 0], [0] * 6 + [1] * 5, [1] * 9 + [0] * 2),
]


def main(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocab.txt").write_text("\n".join(VOCAB) + "\n")
    torch.manual_seed(7)
    cfg = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=16,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=32,
        hidden_act="gelu",
        hidden_dropout_prob=0.0,
        attention_probs_dropout_prob=0.0,
    )
    model = BertModel(cfg, add_pooling_layer=False).eval()
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(0.0, 0.5)
    model.save_pretrained(out, safe_serialization=True)
    cfg_json = json.loads((out / "config.json").read_text())
    keep = {k: cfg_json[k] for k in (
        "vocab_size", "hidden_size", "num_hidden_layers", "num_attention_heads", "intermediate_size",
        "max_position_embeddings", "type_vocab_size", "layer_norm_eps", "initializer_range", "hidden_act",
    )}
    (out / "config.json").write_text(json.dumps(keep, indent=1) + "\n")

    model = model.double()
    cases = []
    for ids, segs, mask in SEQUENCES:
        with torch.no_grad():
            h = model(
                input_ids=torch.tensor([ids]),
                token_type_ids=torch.tensor([segs]),
                attention_mask=torch.tensor([mask]),
            ).last_hidden_state[0]
        cases.append({"input_ids": ids, "token_type_ids": segs, "attention_mask": mask, "hidden": h.tolist()})

    tok = BertTokenizer(str(out / "vocab.txt"), do_lower_case=True)
    pieces = [{"text": t, "ids": tok(t, add_special_tokens=False)["input_ids"]} for t in TEXTS]
    (out / "expected.json").write_text(json.dumps({"cases": cases, "tokenization": pieces}) + "\n")


if __name__ == "__main__":
    main(sys.argv[1])
