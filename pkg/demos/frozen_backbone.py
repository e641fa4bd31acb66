"""Pretrain the toy encoder-decoder briefly, freeze it, and decode with it.

Freezing records a checksum per tensor; any later change to the weights shows
up in ``drift()``. Greedy decoding stops at EOS or after 100 tokens.
"""

import numpy as np

from shego.backbone import BackboneConfig, PretrainConfig, pretrain_and_freeze
from shego.data.synthetic import corpus_texts, default_corpus_spec, generate_synthetic_dialogues
from shego.data.vocab import Vocabulary

_, splits = generate_synthetic_dialogues(default_corpus_spec(dialogues=20))
texts = corpus_texts(splits)
vocab = Vocabulary.build(texts, num_sentinels=8)
config = BackboneConfig(vocab_size=len(vocab), d_model=32, num_heads=2, encoder_layers=1, decoder_layers=1,
                        d_ff=64, max_positions=128)

backbone, losses = pretrain_and_freeze(texts, config, vocab, seed=0, pretrain=PretrainConfig(steps=150))
print(f"span-corruption loss: {np.mean(losses[:10]):.3f} (first 10 steps) -> {np.mean(losses[-10:]):.3f} (last 10)")
print(f"{len(backbone.checksums)} tensors frozen; drift after freeze: {backbone.drift() or 'none'}")

ids = np.array([vocab.encode("i want to fly to boston".split())])
out = backbone.greedy_decode(backbone.embed(ids), np.ones(ids.shape, bool), eos_id=vocab.eos_id,
                             pad_id=vocab.pad_id)
print(f"decoded {len(out[0])} tokens:", " ".join(vocab.token(i) for i in out[0][:20]))

backbone.params["enc0.ff.b1"].data[0] += 1.0
print("after an accidental write:", sorted(backbone.drift()))
