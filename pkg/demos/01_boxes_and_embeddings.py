# Walk through one synthetic form: pixel boxes -> 0..1000 grid -> token
# sequence -> the seven-term embedding sum.
import numpy as np

from layoutlm_desk import synthcorpus as sc
from layoutlm_desk.model import ModelConfig, embed, init_params
from layoutlm_desk.textproc import encode_document

rng = np.random.default_rng(0)
doc = sc.gen_form(sc.FormSpec(n_pairs=3), rng, "demo")
print(doc.page_width, doc.page_height)  # pixel page
for w, e in zip(doc.words, doc.normalized_words()):
    print(f"{w.text:10s} px={w.box}  grid={e.bbox.as_tuple()}")

# gold roles come from geometry only: left column = question, right = answer
for ent in sorted(doc.entities, key=lambda e: e.start):
    print(ent.label, [w.text for w in doc.words[ent.start:ent.end + 1]])
print("geometry recovers labels:", sc.self_check(doc))

vocab = sc.corpus_vocab([doc], 64)
seq = encode_document(vocab, doc.normalized_words(), 24, doc.doc_id)
print(seq.ids[:12])
print(seq.bboxes[:4])  # [CLS] spans the page, [PAD] rows are zero

cfg = ModelConfig(layers=1, hidden=8, heads=2, ffn_dim=16, max_len=24, vocab_size=len(vocab))
p = init_params(cfg, 0)
h = embed(p, seq, cfg).data[0]

# token 1 by hand: word + pos + seg + X[x0] + Y[y0] + X[x1] + Y[y1]
x0, y0, x1, y1 = seq.bboxes[1]
manual = (p["emb.word"][seq.ids[1]] + p["emb.pos1d"][1] + p["emb.segment"][0]
          + p["emb.x"][x0] + p["emb.y"][y0] + p["emb.x"][x1] + p["emb.y"][y1])
print(np.abs(h[1] - manual).max())  # 0.0

# text-only mode: same shapes, X/Y tables zero, so boxes drop out
tcfg = cfg.replace(use_layout=False)
tp = init_params(tcfg, 0)
print(tp["emb.x"].any(), tp["emb.y"].any())
