"""Show how one dialogue turn becomes a model input and a decoding target.

The query lists each slot description followed by its sentinel. The target
fills the sentinels with lowercased values, using "none" for unset slots.
The encoder input stacks graph prompts, shared prompts, the dialogue history
and the query; only the history is ever truncated.
"""

import numpy as np

from shego.data.synthetic import corpus_texts, default_corpus_spec, generate_synthetic_corpus
from shego.data.vocab import Vocabulary
from shego.evaluator import parse_decoded
from shego.numerics import Tensor
from shego.prompts import assemble_input, build_query, build_target

corpus = generate_synthetic_corpus(default_corpus_spec(dialogues=6))
example = max(corpus.train, key=lambda ex: (len(ex.active_slots), len(ex.history)))
query = build_query(corpus.schema, example.service)
target = build_target(example, query)

print("service:", example.service)
for speaker, text in example.history:
    print(f"  {speaker or 'system':>6}: {text}")
print("query: ", query.text)
print("target:", target.text)
print("parsed back:", parse_decoded(target.tokens, query))

vocab = Vocabulary.build(corpus_texts(corpus.dialogues) + [query.text], num_sentinels=8)
width = 8
embeddings = Tensor(np.random.default_rng(0).normal(size=(vocab.text_size, width)))
m = len(corpus.schema.slot_keys)
graph_prompts = np.zeros((m, width))
shared_prompts = np.ones((4, width))
layout = assemble_input(example, query, graph_prompts, shared_prompts, embeddings, vocab, max_positions=40)
print(f"\ninput of {layout.length} positions (budget 40):")
for name, (lo, hi) in layout.segments.items():
    print(f"  {name:<8} rows {lo:>2}..{hi - 1:>2}")
