"""Small encoder-decoder transformer used as the frozen sequence-to-sequence backbone.

Pre-norm blocks, sinusoidal absolute positions, GELU feed-forward, causal
decoder self-attention and an untied output projection. The encoder takes
already-embedded rows so prompt vectors can be spliced in front of (or after)
token embeddings.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data.vocab import Vocabulary, segment
from .numerics import AdamW, F, ParamGroup, Tensor, clip_grad_norm, no_grad, tensor_checksum

logger = logging.getLogger(__name__)

DEFAULT_MAX_DECODE = 100


class SequenceLengthError(ValueError):
    pass


class FrozenWeightError(RuntimeError):
    pass


@dataclass
class BackboneConfig:
    vocab_size: int
    d_model: int = 512
    num_heads: int = 8
    encoder_layers: int = 6
    decoder_layers: int = 6
    d_ff: int = 2048
    max_positions: int = 512

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}")


def sinusoidal_positions(length: int, d_model: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe.astype(dtype)


def init_backbone_params(config: BackboneConfig, rng: np.random.Generator, dtype=None) -> dict[str, Tensor]:
    dtype = dtype or F.get_default_dtype()
    d, ff = config.d_model, config.d_ff
    p: dict[str, np.ndarray] = {"embed": rng.normal(0.0, 1.0, (config.vocab_size, d))}

    def dense(name, n_in, n_out):
        p[name] = rng.normal(0.0, n_in ** -0.5, (n_in, n_out))

    def norm(name):
        p[name + ".g"] = np.ones(d)
        p[name + ".b"] = np.zeros(d)

    def attention(prefix):
        for w in ("q", "k", "v", "o"):
            dense(f"{prefix}.{w}", d, d)

    def feed_forward(prefix):
        dense(prefix + ".w1", d, ff)
        p[prefix + ".b1"] = np.zeros(ff)
        dense(prefix + ".w2", ff, d)
        p[prefix + ".b2"] = np.zeros(d)

    for i in range(config.encoder_layers):
        norm(f"enc{i}.ln1")
        attention(f"enc{i}.attn")
        norm(f"enc{i}.ln2")
        feed_forward(f"enc{i}.ff")
    norm("enc.ln_f")
    for i in range(config.decoder_layers):
        norm(f"dec{i}.ln1")
        attention(f"dec{i}.self")
        norm(f"dec{i}.ln2")
        attention(f"dec{i}.cross")
        norm(f"dec{i}.ln3")
        feed_forward(f"dec{i}.ff")
    norm("dec.ln_f")
    dense("lm_head", d, config.vocab_size)
    return {k: Tensor(v.astype(dtype), requires_grad=True, name=f"backbone.{k}") for k, v in p.items()}


@dataclass
class Backbone:
    config: BackboneConfig
    params: dict[str, Tensor]
    frozen: bool = False
    checksums: dict[str, str] = field(default_factory=dict)

    @classmethod
    def create(cls, config: BackboneConfig, seed: int = 0, dtype=None) -> "Backbone":
        return cls(config, init_backbone_params(config, np.random.default_rng(seed), dtype))

    # -- freeze contract ------------------------------------------------------
    def freeze(self) -> None:
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None
        self.frozen = True
        self.checksums = {k: tensor_checksum(t.data) for k, t in self.params.items()}

    def drift(self) -> dict[str, tuple[str, str]]:
        """Tensors whose bytes differ from the freeze-time checksum."""
        out = {}
        for k, t in self.params.items():
            now = tensor_checksum(t.data)
            if self.checksums.get(k) != now:
                out[k] = (self.checksums.get(k, "<missing>"), now)
        return out

    def verify_frozen(self) -> None:
        bad = self.drift()
        if bad:
            lines = "\n".join(f"  {k}: {a[:12]} -> {b[:12]}" for k, (a, b) in sorted(bad.items()))
            raise FrozenWeightError(f"frozen backbone tensors changed:\n{lines}")

    # -- building blocks ------------------------------------------------------
    def _ln(self, x, name):
        return F.layer_norm(x, self.params[name + ".g"], self.params[name + ".b"])

    def _split_heads(self, x, w):
        b, n, d = x.shape
        h = self.config.num_heads
        return F.transpose(F.reshape(F.matmul(x, self.params[w]), (b, n, h, d // h)), (0, 2, 1, 3))

    def _key_values(self, prefix, xkv):
        return self._split_heads(xkv, prefix + ".k"), self._split_heads(xkv, prefix + ".v")

    def _attend(self, prefix, xq, k, v, mask):
        b, lq, d = xq.shape
        q = self._split_heads(xq, prefix + ".q")
        scores = F.matmul(q, F.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d // self.config.num_heads))
        attn = F.softmax(scores, axis=-1, mask=mask)
        out = F.reshape(F.transpose(F.matmul(attn, v), (0, 2, 1, 3)), (b, lq, d))
        return F.matmul(out, self.params[prefix + ".o"])

    def _attention(self, prefix, xq, xkv, key_mask, causal: bool):
        lq, lk = xq.shape[1], xkv.shape[1]
        k, v = self._key_values(prefix, xkv)
        mask = key_mask[:, None, None, :]
        if causal:
            mask = mask & np.tril(np.ones((lq, lk), dtype=bool))[None, None]
        return self._attend(prefix, xq, k, v, mask)

    def _ff(self, prefix, x):
        p = self.params
        return F.linear(F.gelu(F.linear(x, p[prefix + ".w1"], p[prefix + ".b1"])),
                        p[prefix + ".w2"], p[prefix + ".b2"])

    def positions(self, length: int, dtype) -> np.ndarray:
        if length > self.config.max_positions:
            raise SequenceLengthError(f"sequence of length {length} exceeds max_positions={self.config.max_positions}")
        return sinusoidal_positions(length, self.config.d_model, dtype)

    def embed(self, ids, table: Tensor | None = None) -> Tensor:
        return F.embedding(self.params["embed"] if table is None else table, ids)

    # -- forward ---------------------------------------------------------------
    def encode(self, enc_input: Tensor, enc_mask: np.ndarray) -> Tensor:
        b, length, _ = enc_input.shape
        x = enc_input + self.positions(length, enc_input.dtype)
        for i in range(self.config.encoder_layers):
            y = self._ln(x, f"enc{i}.ln1")
            x = x + self._attention(f"enc{i}.attn", y, y, enc_mask, causal=False)
            x = x + self._ff(f"enc{i}.ff", self._ln(x, f"enc{i}.ln2"))
        return self._ln(x, "enc.ln_f")

    def decode(self, memory: Tensor, enc_mask: np.ndarray, dec_ids: np.ndarray,
               table: Tensor | None = None) -> Tensor:
        dec_ids = np.asarray(dec_ids)
        b, t = dec_ids.shape
        x = self.embed(dec_ids, table)
        x = x + self.positions(t, x.dtype)
        self_mask = np.ones((b, t), dtype=bool)
        for i in range(self.config.decoder_layers):
            y = self._ln(x, f"dec{i}.ln1")
            x = x + self._attention(f"dec{i}.self", y, y, self_mask, causal=True)
            x = x + self._attention(f"dec{i}.cross", self._ln(x, f"dec{i}.ln2"), memory, enc_mask, causal=False)
            x = x + self._ff(f"dec{i}.ff", self._ln(x, f"dec{i}.ln3"))
        return F.matmul(self._ln(x, "dec.ln_f"), self.params["lm_head"])

    def forward_teacher_forced(self, enc_input: Tensor, enc_mask: np.ndarray, target_ids: np.ndarray,
                               pad_id: int = 0, table: Tensor | None = None) -> Tensor:
        """Logits (B, T, V) for every target position given the gold prefix.

        The decoder input is the target shifted right with ``pad_id`` as the
        start token.
        """
        target_ids = np.asarray(target_ids)
        dec_in = np.concatenate([np.full((target_ids.shape[0], 1), pad_id), target_ids[:, :-1]], axis=1)
        return self.decode(self.encode(enc_input, enc_mask), enc_mask, dec_in, table)

    def greedy_decode(self, enc_input: Tensor, enc_mask: np.ndarray, max_len: int = DEFAULT_MAX_DECODE,
                      eos_id: int = 1, pad_id: int = 0, table: Tensor | None = None,
                      use_cache: bool = True) -> list[list[int]]:
        """Argmax decoding until EOS or ``max_len`` tokens (EOS is not returned).

        ``np.argmax`` returns the first maximum, so ties go to the lowest id.
        With ``use_cache`` the decoder runs one position per step against
        cached keys/values; otherwise it re-runs the whole prefix each step.
        """
        with no_grad():
            memory = self.encode(enc_input, enc_mask)
            b = enc_input.shape[0]
            seq = np.full((b, 1), pad_id, dtype=np.int64)
            done = np.zeros(b, dtype=bool)
            step_fn = self._cached_stepper(memory, enc_mask, table) if use_cache else None
            for _ in range(max_len):
                if step_fn is None:
                    logits = self.decode(memory, enc_mask, seq, table).data[:, -1, :]
                else:
                    logits = step_fn(seq[:, -1])
                nxt = np.argmax(logits, axis=-1)
                nxt = np.where(done, pad_id, nxt)
                seq = np.concatenate([seq, nxt[:, None]], axis=1)
                done |= nxt == eos_id
                if done.all():
                    break
        out = []
        for row in seq[:, 1:]:
            toks = []
            for tok in row.tolist():
                if tok == eos_id:
                    break
                toks.append(tok)
            out.append(toks[:max_len])
        return out

    def _cached_stepper(self, memory: Tensor, enc_mask: np.ndarray, table: Tensor | None):
        """Closure mapping the latest token ids (B,) to next-token logits (B, V)."""
        n_layers = self.config.decoder_layers
        cross = [self._key_values(f"dec{i}.cross", memory) for i in range(n_layers)]
        cross_mask = enc_mask[:, None, None, :]
        cache: list[tuple[Tensor, Tensor] | None] = [None] * n_layers
        pos = 0

        def step(last_ids: np.ndarray) -> np.ndarray:
            nonlocal pos
            if pos >= self.config.max_positions:
                raise SequenceLengthError(f"decoder position {pos} exceeds max_positions={self.config.max_positions}")
            x = self.embed(last_ids[:, None], table)
            x = x + sinusoidal_positions(pos + 1, self.config.d_model, x.dtype)[pos:pos + 1]
            for i in range(n_layers):
                y = self._ln(x, f"dec{i}.ln1")
                k, v = self._key_values(f"dec{i}.self", y)
                if cache[i] is not None:
                    k = F.concat([cache[i][0], k], axis=2)
                    v = F.concat([cache[i][1], v], axis=2)
                cache[i] = (k, v)
                x = x + self._attend(f"dec{i}.self", y, k, v, None)
                x = x + self._attend(f"dec{i}.cross", self._ln(x, f"dec{i}.ln2"), *cross[i], cross_mask)
                x = x + self._ff(f"dec{i}.ff", self._ln(x, f"dec{i}.ln3"))
            pos += 1
            return F.matmul(self._ln(x, "dec.ln_f"), self.params["lm_head"]).data[:, 0, :]

        return step


# -- toy pretraining -----------------------------------------------------------

def span_corrupt(ids: list[int], vocab: Vocabulary, rng: np.random.Generator,
                 noise: float = 0.15, mean_span: float = 3.0) -> tuple[list[int], list[int]]:
    """Replace random spans with sentinels; target lists each sentinel then its span."""
    n = len(ids)
    if n == 0:
        return [], [vocab.eos_id]
    n_noise = max(1, int(round(n * noise)))
    n_spans = max(1, min(vocab.num_sentinels, int(round(n_noise / mean_span)), n))
    starts = np.sort(rng.choice(n, size=n_spans, replace=False))
    lengths = np.maximum(1, rng.poisson(mean_span - 1, size=n_spans) + 1)
    inp, tgt = [], []
    pos = 0
    k = 0
    for s, ln in zip(starts.tolist(), lengths.tolist()):
        if s < pos:
            continue
        e = min(n, s + ln)
        k += 1
        inp.extend(ids[pos:s])
        inp.append(vocab.sentinel_id(k))
        tgt.append(vocab.sentinel_id(k))
        tgt.extend(ids[s:e])
        pos = e
    inp.extend(ids[pos:])
    tgt.append(vocab.eos_id)
    return inp, tgt


def pad_batch(seqs: list[list[int]], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    width = max(1, max(len(s) for s in seqs))
    arr = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        arr[i, :len(s)] = s
        mask[i, :len(s)] = True
    return arr, mask


@dataclass
class PretrainConfig:
    steps: int = 300
    batch_size: int = 16
    lr: float = 1e-3
    max_grad_norm: float = 1.0
    mode: str = "pretrain"  # or "random-frozen"


def pretrain_and_freeze(corpus: list[str], config: BackboneConfig, vocab: Vocabulary, seed: int = 0,
                        pretrain: PretrainConfig | None = None) -> tuple[Backbone, list[float]]:
    """Span-corruption pretraining on ``corpus`` then freeze; returns (backbone, loss curve)."""
    pretrain = pretrain or PretrainConfig()
    backbone = Backbone.create(config, seed)
    losses: list[float] = []
    if pretrain.mode not in ("pretrain", "random-frozen"):
        raise ValueError(f"unknown pretraining mode {pretrain.mode!r}")
    if pretrain.mode == "pretrain":
        texts = [t for t in corpus if segment(t)]
        if not texts:
            raise ValueError("pretraining corpus is empty")
        rng = np.random.default_rng(seed + 1)
        group = ParamGroup("backbone", backbone.params, lr=pretrain.lr, weight_decay=0.0)
        opt = AdamW([group])
        for step in range(pretrain.steps):
            batch = [texts[i] for i in rng.integers(len(texts), size=pretrain.batch_size)]
            pairs = [span_corrupt(vocab.encode(segment(t))[: config.max_positions], vocab, rng) for t in batch]
            enc_ids, enc_mask = pad_batch([p[0] for p in pairs])
            tgt_ids, tgt_mask = pad_batch([p[1] for p in pairs])
            logits = backbone.forward_teacher_forced(backbone.embed(enc_ids), enc_mask, tgt_ids)
            nll = F.cross_entropy(logits, tgt_ids, ignore_index=vocab.pad_id)
            loss = F.tsum(nll) * (1.0 / tgt_mask.sum())
            opt.zero_grad()
            loss.backward()
            clip_grad_norm([group], pretrain.max_grad_norm)
            opt.step()
            losses.append(float(loss.data))
            if step % 50 == 0:
                logger.info("pretrain step %d loss %.4f", step, losses[-1])
    backbone.freeze()
    return backbone, losses


def backbone_meta(backbone: Backbone) -> dict:
    return {"config": asdict(backbone.config), "checksums": backbone.checksums, "frozen": backbone.frozen}
