"""Encoder-decoder recurrent policy with single-head dot attention.

Two execution paths share the same parameter arrays and cell formulas:

* the teacher-forced path runs on autodiff Tensors and serves both loss
  construction (inside a Tape) and batched sequence scoring (outside one);
* the incremental path runs on plain numpy and serves ancestral sampling,
  greedy decoding, and beam search.

Token conventions: sources and targets are content-token id lists without
specials.  The encoder consumes source + EOS.  The decoder is fed BOS and
predicts the target followed by EOS; sequences that hit the length cap
before emitting EOS are scored without the terminator step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_size: int = 48
    layer_count: int = 1
    dropout: float = 0.1
    tied_softmax: bool = True

    def __post_init__(self):
        if self.vocab_size <= UNK_ID:
            raise ValueError("vocab_size must cover the reserved ids")
        if self.hidden_size < 1 or self.layer_count < 1:
            raise ValueError("hidden_size and layer_count must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameter dict; draw order is fixed so a seed pins the init."""
    h = cfg.hidden_size
    scale = 1.0 / np.sqrt(h)
    params: dict[str, np.ndarray] = {}
    params["emb"] = rng.normal(0.0, 0.1, size=(cfg.vocab_size, h))
    for side in ("enc", "dec"):
        for layer in range(cfg.layer_count):
            params[f"{side}.{layer}.wx"] = rng.normal(0.0, scale, size=(h, h))
            params[f"{side}.{layer}.wh"] = rng.normal(0.0, scale, size=(h, h))
            params[f"{side}.{layer}.b"] = np.zeros(h)
    params["att.w"] = rng.normal(0.0, scale, size=(h, h))
    params["out.w"] = rng.normal(0.0, scale, size=(2 * h, h))
    params["out.b"] = np.zeros(h)
    if not cfg.tied_softmax:
        params["proj.w"] = rng.normal(0.0, scale, size=(h, cfg.vocab_size))
    params["proj.b"] = np.zeros(cfg.vocab_size)
    return params


def default_max_len(src_len: int) -> int:
    return 2 * src_len + 8


def pad_batch(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to a rectangle; returns (ids, mask) with mask 1.0 on real tokens."""
    if not seqs:
        raise ValueError("empty batch")
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def encoder_input(src_tokens: list[int]) -> list[int]:
    return list(src_tokens) + [EOS_ID]


def decoder_io(tgt_tokens: list[int], terminated: bool) -> tuple[list[int], list[int]]:
    """(decoder input, decoder output) for one target; EOS only if terminated."""
    out = list(tgt_tokens) + ([EOS_ID] if terminated else [])
    if not out:
        raise ValueError("cannot score an empty, unterminated target")
    return [BOS_ID] + out[:-1], out


def wrap_params(params: dict[str, np.ndarray], trainable: bool = False) -> dict[str, ad.Tensor]:
    return {name: ad.Tensor(arr, requires_grad=trainable) for name, arr in params.items()}


def collect_grads(tparams: dict[str, ad.Tensor]) -> dict[str, np.ndarray]:
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in tparams.items()
    }


# --- Tensor path: teacher-forced scoring and loss construction ---------------


def encode_t(tp: dict[str, ad.Tensor], cfg: ModelConfig, src_ids: np.ndarray,
             src_mask: np.ndarray) -> tuple[ad.Tensor, list[ad.Tensor]]:
    """Encoder over a padded batch; returns (states (B,Ts,H), final h per layer)."""
    batch, steps = src_ids.shape
    hs = [ad.Tensor(np.zeros((batch, cfg.hidden_size))) for _ in range(cfg.layer_count)]
    top_states = []
    for t in range(steps):
        x = ad.embedding(tp["emb"], src_ids[:, t])
        keep = src_mask[:, t][:, None]
        for layer in range(cfg.layer_count):
            h_new = ad.tanh(
                ad.add(
                    ad.add(
                        ad.matmul(x, tp[f"enc.{layer}.wx"]),
                        ad.matmul(hs[layer], tp[f"enc.{layer}.wh"]),
                    ),
                    tp[f"enc.{layer}.b"],
                )
            )
            # Padded steps carry the previous state forward, so the final
            # state is the one at each row's true last token.
            hs[layer] = ad.add(ad.mul(h_new, keep), ad.mul(hs[layer], 1.0 - keep))
            x = hs[layer]
        top_states.append(hs[-1])
    return ad.stack(top_states, axis=1), hs


def decoder_step_t(tp: dict[str, ad.Tensor], cfg: ModelConfig, x: ad.Tensor,
                   hs: list[ad.Tensor], enc_states: ad.Tensor, enc_mask: np.ndarray,
                   out_drop: np.ndarray | None = None) -> ad.Tensor:
    """One decoder step; updates hs in place and returns logits (B,V)."""
    for layer in range(cfg.layer_count):
        hs[layer] = ad.tanh(
            ad.add(
                ad.add(
                    ad.matmul(x, tp[f"dec.{layer}.wx"]),
                    ad.matmul(hs[layer], tp[f"dec.{layer}.wh"]),
                ),
                tp[f"dec.{layer}.b"],
            )
        )
        x = hs[layer]
    query = ad.matmul(hs[-1], tp["att.w"])
    scores = ad.mul(ad.attn_scores(query, enc_states), 1.0 / np.sqrt(cfg.hidden_size))
    scores = ad.add(scores, (enc_mask - 1.0) * 1e9)
    weights = ad.softmax(scores)
    context = ad.attn_context(weights, enc_states)
    combined = ad.tanh(
        ad.add(ad.matmul(ad.concat([hs[-1], context], axis=-1), tp["out.w"]), tp["out.b"])
    )
    if out_drop is not None:
        combined = ad.mul(combined, out_drop)
    if cfg.tied_softmax:
        logits = ad.matmul(combined, tp["emb"], transpose_b=True)
    else:
        logits = ad.matmul(combined, tp["proj.w"])
    return ad.add(logits, tp["proj.b"])


def sequence_logprobs_t(tp: dict[str, ad.Tensor], cfg: ModelConfig,
                        sources: list[list[int]], targets: list[list[int]],
                        terminated: list[bool],
                        dropout_rng: np.random.Generator | None = None) -> ad.Tensor:
    """Per-sequence log p(target | source) as a (B,) Tensor.

    Teacher-forced over a padded batch; padded steps contribute exactly 0.
    Dropout (inverted, rate cfg.dropout) is applied to the decoder input
    embedding and the pre-logit layer only when dropout_rng is given.
    """
    if not (len(sources) == len(targets) == len(terminated)):
        raise ValueError("batch lists must be parallel")
    src_ids, src_mask = pad_batch([encoder_input(s) for s in sources])
    ios = [decoder_io(t, term) for t, term in zip(targets, terminated)]
    tgt_in, _ = pad_batch([io[0] for io in ios])
    tgt_out, out_mask = pad_batch([io[1] for io in ios])
    # PAD_ID == 0 keeps padded gather positions valid; out_mask zeroes them.

    enc_states, enc_hs = encode_t(tp, cfg, src_ids, src_mask)
    hs = list(enc_hs)
    batch, steps = tgt_in.shape
    keep = 1.0 - cfg.dropout
    total = ad.Tensor(np.zeros(batch))
    for t in range(steps):
        x = ad.embedding(tp["emb"], tgt_in[:, t])
        out_drop = None
        if dropout_rng is not None and cfg.dropout > 0.0:
            in_drop = (dropout_rng.random(x.shape) < keep) / keep
            out_drop = (dropout_rng.random((batch, cfg.hidden_size)) < keep) / keep
            x = ad.mul(x, in_drop)
        logits = decoder_step_t(tp, cfg, x, hs, enc_states, src_mask, out_drop)
        logp = ad.log_softmax(logits)
        picked = ad.gather_rows(logp, tgt_out[:, t])
        total = ad.add(total, ad.mul(picked, out_mask[:, t]))
    return total


def score_pairs(params: dict[str, np.ndarray], cfg: ModelConfig,
                sources: list[list[int]], targets: list[list[int]],
                terminated: list[bool] | None = None) -> np.ndarray:
    """log p(target | source) for each pair, without recording gradients."""
    if terminated is None:
        terminated = [True] * len(sources)
    tp = wrap_params(params, trainable=False)
    return sequence_logprobs_t(tp, cfg, sources, targets, terminated).data.copy()


def log_prob(params: dict[str, np.ndarray], cfg: ModelConfig,
             source: list[int], target: list[int], terminated: bool = True) -> float:
    return float(score_pairs(params, cfg, [source], [target], [terminated])[0])


# --- Numpy path: incremental decoding ----------------------------------------


class _NpEncoder:
    """Encoder output shared by every decode mode: states, mask, final h."""

    __slots__ = ("states", "mask", "finals")

    def __init__(self, params, cfg: ModelConfig, sources: list[list[int]]):
        src_ids, src_mask = pad_batch([encoder_input(s) for s in sources])
        batch, steps = src_ids.shape
        hs = [np.zeros((batch, cfg.hidden_size)) for _ in range(cfg.layer_count)]
        top = np.zeros((batch, steps, cfg.hidden_size))
        for t in range(steps):
            x = params["emb"][src_ids[:, t]]
            keep = src_mask[:, t][:, None]
            for layer in range(cfg.layer_count):
                h_new = np.tanh(
                    x @ params[f"enc.{layer}.wx"]
                    + hs[layer] @ params[f"enc.{layer}.wh"]
                    + params[f"enc.{layer}.b"]
                )
                hs[layer] = h_new * keep + hs[layer] * (1.0 - keep)
                x = hs[layer]
            top[:, t] = hs[-1]
        self.states = top
        self.mask = src_mask
        self.finals = hs

    def select(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        return self.states[rows], self.mask[rows], [h[rows] for h in self.finals]

    def tile(self, n: int) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        if self.states.shape[0] != 1:
            raise ValueError("tile expects a single encoded source")
        rows = np.zeros(n, dtype=np.int64)
        return self.select(rows)


def _decoder_step_np(params, cfg: ModelConfig, prev_tokens: np.ndarray,
                     hs: list[np.ndarray], enc_states: np.ndarray,
                     enc_mask: np.ndarray) -> np.ndarray:
    """One incremental decoder step; updates hs in place, returns logits (B,V)."""
    x = params["emb"][prev_tokens]
    for layer in range(cfg.layer_count):
        hs[layer] = np.tanh(
            x @ params[f"dec.{layer}.wx"]
            + hs[layer] @ params[f"dec.{layer}.wh"]
            + params[f"dec.{layer}.b"]
        )
        x = hs[layer]
    query = hs[-1] @ params["att.w"]
    scores = np.einsum("bh,bth->bt", query, enc_states) / np.sqrt(cfg.hidden_size)
    scores = scores + (enc_mask - 1.0) * 1e9
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    context = np.einsum("bt,bth->bh", weights, enc_states)
    combined = np.tanh(np.concatenate([hs[-1], context], axis=-1) @ params["out.w"] + params["out.b"])
    if cfg.tied_softmax:
        logits = combined @ params["emb"].T
    else:
        logits = combined @ params["proj.w"]
    return logits + params["proj.b"]


def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_batch(params: dict[str, np.ndarray], cfg: ModelConfig, source: list[int],
                 temperatures: np.ndarray, rng: np.random.Generator,
                 max_len: int | None = None) -> tuple[list[list[int]], list[bool], np.ndarray]:
    """Ancestral samples from one source, one row per temperature.

    Row i is drawn from the distribution tempered by temperatures[i], while
    the returned log-probability q_i accumulates the untempered (T=1)
    per-step log-probs of the drawn tokens.  Returns (token lists without
    EOS, terminated flags, q).
    """
    temperatures = np.asarray(temperatures, dtype=np.float64)
    if temperatures.ndim != 1 or temperatures.size == 0:
        raise ValueError("temperatures must be a non-empty 1-D array")
    if np.any(temperatures <= 0.0):
        raise ValueError("temperatures must be positive")
    n = temperatures.size
    if max_len is None:
        max_len = default_max_len(len(source))

    enc = _NpEncoder(params, cfg, [source])
    enc_states, enc_mask, hs = enc.tile(n)
    prev = np.full(n, BOS_ID, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    q = np.zeros(n)
    tokens: list[list[int]] = [[] for _ in range(n)]
    terminated = [False] * n

    for _ in range(max_len):
        logits = _decoder_step_np(params, cfg, prev, hs, enc_states, enc_mask)
        base_logp = _log_softmax_np(logits)
        scaled = logits / temperatures[:, None]
        scaled -= scaled.max(axis=-1, keepdims=True)
        probs = np.exp(scaled)
        probs /= probs.sum(axis=-1, keepdims=True)
        draw = rng.random(n)
        nxt = np.minimum(
            (probs.cumsum(axis=-1) < draw[:, None]).sum(axis=-1), cfg.vocab_size - 1
        ).astype(np.int64)
        for i in range(n):
            if not alive[i]:
                continue
            q[i] += base_logp[i, nxt[i]]
            if nxt[i] == EOS_ID:
                terminated[i] = True
                alive[i] = False
            else:
                tokens[i].append(int(nxt[i]))
        if not alive.any():
            break
        prev = np.where(alive, nxt, EOS_ID)
    return tokens, terminated, q


def greedy_decode(params: dict[str, np.ndarray], cfg: ModelConfig,
                  sources: list[list[int]], max_len: int | None = None) -> list[list[int]]:
    """Argmax decoding over a batch of sources; returns content tokens."""
    if max_len is None:
        max_len = max(default_max_len(len(s)) for s in sources)
    enc = _NpEncoder(params, cfg, sources)
    n = len(sources)
    hs = list(enc.finals)
    prev = np.full(n, BOS_ID, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    tokens: list[list[int]] = [[] for _ in range(n)]
    for _ in range(max_len):
        logits = _decoder_step_np(params, cfg, prev, hs, enc.states, enc.mask)
        nxt = logits.argmax(axis=-1).astype(np.int64)
        for i in range(n):
            if not alive[i]:
                continue
            if nxt[i] == EOS_ID:
                alive[i] = False
            else:
                tokens[i].append(int(nxt[i]))
        if not alive.any():
            break
        prev = np.where(alive, nxt, EOS_ID)
    return tokens


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    logprob: float
    terminated: bool

    def normalized(self, alpha: float) -> float:
        # Length counts the steps the decoder actually took, EOS included.
        length = len(self.tokens) + (1 if self.terminated else 0)
        return self.logprob / max(1, length) ** alpha


def beam_decode(params: dict[str, np.ndarray], cfg: ModelConfig, source: list[int],
                beam_size: int, alpha: float = 0.0,
                max_len: int | None = None) -> BeamHypothesis:
    """Beam search with length-normalized selection over a finished-hypothesis bank.

    Partial beams are ranked by raw log-probability; the returned hypothesis
    maximizes logprob / length**alpha over everything that finished (falling
    back to live beams only if nothing terminated within max_len).
    """
    if beam_size < 1:
        raise ValueError("beam_size must be at least 1")
    if max_len is None:
        max_len = default_max_len(len(source))
    enc = _NpEncoder(params, cfg, [source])

    beams = [(tuple(), 0.0)]
    states = [h.copy() for h in enc.finals]
    bank: list[BeamHypothesis] = []
    prev = np.full(1, BOS_ID, dtype=np.int64)

    for _ in range(max_len):
        k = len(beams)
        enc_states, enc_mask, _ = enc.tile(k)
        logits = _decoder_step_np(params, cfg, prev, states, enc_states, enc_mask)
        logp = _log_softmax_np(logits)
        totals = np.array([b[1] for b in beams])[:, None] + logp
        flat = totals.ravel()
        order = np.argsort(-flat, kind="stable")
        next_beams, next_rows, next_prev = [], [], []
        vocab = logp.shape[1]
        for idx in order:
            if len(next_beams) == beam_size:
                break
            row, tok = divmod(int(idx), vocab)
            score = float(flat[idx])
            if tok == EOS_ID:
                # EOS competes for a beam slot; winners retire to the bank.
                bank.append(BeamHypothesis(beams[row][0], score, True))
            else:
                next_beams.append((beams[row][0] + (tok,), score))
                next_rows.append(row)
                next_prev.append(tok)
        if not next_beams:
            break
        rows = np.array(next_rows, dtype=np.int64)
        states = [h[rows] for h in states]
        beams = next_beams
        prev = np.array(next_prev, dtype=np.int64)

    if not bank:
        bank = [BeamHypothesis(t, s, False) for t, s in beams]
    return max(bank, key=lambda h: (h.normalized(alpha), -len(h.tokens)))
