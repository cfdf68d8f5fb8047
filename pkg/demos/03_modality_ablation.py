# Text-only vs text+layout on the shared-lexicon form task. Keys and values
# use the same phrases, so only the boxes say which is which.
import numpy as np

from layoutlm_desk import synthcorpus as sc
from layoutlm_desk.finetune_eval import FinetuneHP, finetune_seqlabel, prepare_docs
from layoutlm_desk.model import Checkpoint, ModelConfig, bieso_tagset, init_params

train, dev = sc.form_dataset(100, 0), sc.form_dataset(30, 1)
vocab = sc.corpus_vocab(train + dev)
hp = FinetuneHP(epochs=4, batch_size=8, lr=1e-3, seed=0)

for use_layout in (False, True):
    cfg = ModelConfig(vocab_size=len(vocab), max_len=64, use_layout=use_layout,
                      tagset=bieso_tagset(sc.FORM_TYPES))
    tr = prepare_docs(train, vocab, cfg, "seqlabel")
    dv = prepare_docs(dev, vocab, cfg, "seqlabel")
    res = finetune_seqlabel(Checkpoint(init_params(cfg, 0), cfg), tr, dv, hp)
    name = "text+layout" if use_layout else "text-only"
    curve = [round(h["f1"], 3) for h in res.history]
    print(f"{name:12s} best F1 {res.metrics['f1']:.3f}  per epoch {curve}")
    print("   word accuracy", round(res.metrics["word_accuracy"], 3))

# text-only still finds the spans; it just cannot tell question from answer
