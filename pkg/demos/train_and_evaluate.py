"""Train graph and prompt parameters on a small synthetic corpus, then score the test split.

Pass a number of epochs on the command line (default 40). The backbone here is
pretrained for only a few hundred steps so the demo finishes in a few minutes;
the acceptance suite uses the full toy setup.
"""

import sys

from shego.config import config_from_dict
from shego.pipeline import build_model, build_vocabulary, load_corpus, pretrain_backbone
from shego.trainer import evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 40
cfg = config_from_dict({
    "data": {"synthetic": {"dialogues": 50}},
    "pretrain": {"steps": 600},
    "train": {"max_epochs": epochs, "patience": epochs},
})
data = load_corpus(cfg)
vocab = build_vocabulary(data, cfg.data.num_sentinels)
backbone, _ = pretrain_backbone(cfg, data, vocab)
model = build_model(cfg, data.schema, vocab, backbone)
print({k: len(v) for k, v in data.splits.items()}, "turns;",
      sum(t.data.size for t in model.trainable().values()), "trainable numbers")

state = train(cfg.train, model, data.splits["train"], data.splits["dev"])
for rec in state.records[:: max(1, len(state.records) // 6)]:
    print(f"  epoch {rec.epoch:>3}  loss {rec.train_loss:.3f}  dev Avg. JGA {rec.dev_avg_jga:.3f}")
print(f"best epoch {state.best_epoch}, dev Avg. JGA {state.best_metric:.3f}")

print("\ntraining split")
print(evaluate(model, data.splits["train"]).table())
print("\ntest split")
print(evaluate(model, data.splits["test"]).table())

example = data.splits["test"][0]
print("\nexample:", example.history[-1][1])
print("  predicted:", model.predict([example])[0].predicted)
print("  gold:     ", example.gold_state)
