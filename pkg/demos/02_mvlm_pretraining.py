# Short MVLM pre-training run on the synthetic corpus; prints the loss
# curve at a few checkpoints and the held-out masked-token loss.
import math

import numpy as np

from layoutlm_desk import numkernel as nk
from layoutlm_desk import synthcorpus as sc
from layoutlm_desk.model import ModelConfig
from layoutlm_desk.pretrain import MaskingPolicy, apply_masking, heldout_mvlm_loss, run_pretrain

docs = sc.pretrain_documents(300, np.random.default_rng([0, 0]))
held = sc.pretrain_documents(50, np.random.default_rng([1, 0]))
vocab = sc.corpus_vocab(docs)
cfg = ModelConfig(layers=2, hidden=32, heads=4, ffn_dim=64, max_len=64, vocab_size=len(vocab))
corpus = sc.encode_pretrain(docs, vocab, cfg.max_len)
print(len(corpus), "docs,", len(vocab), "tokens, ln V =", round(math.log(len(vocab)), 3))

# masking: ids change, boxes never do
s = corpus[0].sequence
m, targets = apply_masking(s, MaskingPolicy(), np.random.default_rng(0), len(vocab))
print(targets[:5])
print((m.bboxes == s.bboxes).all())

steps = 200
opt = nk.OptimizerConfig(initial_lr=3e-3, total_steps=steps)
ckpt, rec = run_pretrain(corpus, cfg, opt, objectives=("mvlm",), seed=0, batch_size=8)
mv = np.array([r.mvlm for r in rec])
for a in range(0, steps, 50):
    print(f"steps {a + 1:3d}-{a + 50:3d}  mean mvlm {mv[a:a + 50].mean():.3f}  lr {rec[a].lr:.2e}")

held_ex = sc.encode_pretrain(held, vocab, cfg.max_len)
print("held-out", round(heldout_mvlm_loss(ckpt.params, cfg, held_ex), 3))
