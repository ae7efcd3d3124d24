"""Joint review-rating models sharing one scoring interface.

Every model answers three questions about a (user, item) pair: what
rating it predicts, what explanation text it generates, and how likely
an arbitrary text is under it. Perplexity is derived from the last one
and is the only quantity the ranking metrics consume, so any object
implementing the interface can be evaluated.

Trainable models are composed purely from the tape primitives in
`autodiff`; their tape-free inference paths reuse the same forward
functions through a fresh tape per call, so concurrent reads share no
mutable state.
"""

from __future__ import annotations

import abc
import hashlib
from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Tape, log_softmax
from .lexicon import BOS_ID, EOS_ID, PAD_ID, UNK_ID, RESERVED_TOKENS, Vocab, extract_aspect
from .nn import ParamStore, load_checkpoint

EOS_TOKEN = RESERVED_TOKENS[EOS_ID]


def strip_reserved(tokens) -> list[str]:
    return [t for t in tokens if t not in RESERVED_TOKENS]


def clamp_rating(x: float) -> float:
    return float(min(5.0, max(1.0, x)))


def _unit(*parts) -> float:
    """Deterministic hash of the parts mapped into the open interval (0, 1)."""
    digest = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode(), digest_size=8)
    return (int.from_bytes(digest.digest(), "big") + 0.5) / 2.0 ** 64


class ExplainableRecommender(abc.ABC):
    """Rating prediction, explanation generation, and text scoring."""

    privileged = False
    conditions_on_aspect = False

    @abc.abstractmethod
    def predict_rating(self, user: int, item: int) -> float:
        """Predicted rating in [1, 5]."""

    @abc.abstractmethod
    def generate(self, user: int, item: int, aspect: str | None = None,
                 max_len: int | None = None) -> list[str]:
        """Explanation tokens, ending with the EOS marker."""

    @abc.abstractmethod
    def log_likelihood(self, user: int, item: int, tokens) -> float:
        """Sum of per-token log-probabilities, EOS included. Always <= 0."""

    def perplexity(self, user: int, item: int, tokens) -> float:
        """exp(-log_likelihood / T) with T counting scored positions (words + EOS)."""
        tokens = list(tokens)
        if not tokens:
            raise ValueError("perplexity of empty text")
        ll = self.log_likelihood(user, item, tokens)
        return float(np.exp(-ll / (len(tokens) + 1)))

    def log_likelihood_many(self, requests) -> list[float]:
        """Score many (user, item, tokens) requests; overridden where batching pays."""
        return [self.log_likelihood(u, i, tokens) for u, i, tokens in requests]

    def perplexity_many(self, requests) -> list[float]:
        requests = [(u, i, list(tokens)) for u, i, tokens in requests]
        for _, _, tokens in requests:
            if not tokens:
                raise ValueError("perplexity of empty text")
        lls = self.log_likelihood_many(requests)
        return [float(np.exp(-ll / (len(tokens) + 1)))
                for (_, _, tokens), ll in zip(requests, lls)]


@dataclass
class Batch:
    """Padded encodings of a list of reviews."""

    users: np.ndarray       # (B,)
    items: np.ndarray       # (B,)
    aspect_ids: np.ndarray  # (B,) vocab id of each review's aspect term
    input_ids: np.ndarray   # (B, W): BOS then words, right-padded
    target_ids: np.ndarray  # (B, W): words then EOS, right-padded
    pad: np.ndarray         # (B, W): True at padded positions
    ratings: np.ndarray     # (B,) float

    @property
    def scored_positions(self) -> int:
        return int((~self.pad).sum())


def make_batch(reviews, vocab: Vocab) -> Batch:
    if not reviews:
        raise ValueError("empty batch")
    encoded = [vocab.encode(r.tokens, append_eos=False) for r in reviews]
    W = max(len(ids) for ids in encoded) + 1
    B = len(reviews)
    input_ids = np.full((B, W), PAD_ID, dtype=np.int64)
    target_ids = np.full((B, W), PAD_ID, dtype=np.int64)
    pad = np.ones((B, W), dtype=bool)
    for b, ids in enumerate(encoded):
        n = len(ids)
        input_ids[b, 0] = BOS_ID
        input_ids[b, 1:n + 1] = ids
        target_ids[b, :n] = ids
        target_ids[b, n] = EOS_ID
        pad[b, :n + 1] = False
    return Batch(
        users=np.array([r.user for r in reviews], dtype=np.int64),
        items=np.array([r.item for r in reviews], dtype=np.int64),
        aspect_ids=np.array([vocab.token_to_id(r.aspect) for r in reviews], dtype=np.int64),
        input_ids=input_ids,
        target_ids=target_ids,
        pad=pad,
        ratings=np.array([r.rating for r in reviews], dtype=np.float64),
    )


def _sum_target_logprobs(lp: np.ndarray, word_ids) -> float:
    targets = list(word_ids) + [EOS_ID]
    return float(sum(lp[t, tid] for t, tid in enumerate(targets)))


# ----------------------------------------------------------------------
# trainable models


@dataclass(frozen=True)
class TransformerArch:
    embed_dim: int = 64
    ffn_dim: int = 256
    layers: int = 2
    heads: int = 4
    max_len: int = 24
    rating_hidden: int = 64
    use_aspect: bool = False


class TransformerModel(ExplainableRecommender):
    """Decoder with a fully visible (user, item[, aspect]) prefix.

    Word positions attend causally; every position sees the whole
    prefix. The rating head reads the final representation at the item
    position, which by the mask can only depend on the prefix, so rating
    predictions are independent of any decoded words.
    """

    def __init__(self, arch: TransformerArch, vocab: Vocab, num_users: int,
                 num_items: int, seed: int, lexicon=None):
        if arch.use_aspect and lexicon is None:
            raise ValueError("aspect-conditioned model needs a lexicon")
        self.arch = arch
        self.vocab = vocab
        self.num_users = num_users
        self.num_items = num_items
        self.seed = seed
        self.lexicon = lexicon
        self.privileged = arch.use_aspect
        self.conditions_on_aspect = arch.use_aspect
        self.prefix_len = 3 if arch.use_aspect else 2
        self.word_capacity = arch.max_len + 8
        self._masks: dict[int, np.ndarray] = {}

        d = arch.embed_dim
        rng = np.random.default_rng([seed, 0x7F0])
        store = ParamStore()
        store.add_uniform("user.emb", (num_users, d), rng)
        store.add_uniform("item.emb", (num_items, d), rng)
        store.add_uniform("word.emb", (len(vocab), d), rng)
        store.add_uniform("pos.emb", (self.prefix_len + 1 + self.word_capacity, d), rng)
        for layer in range(arch.layers):
            p = f"l{layer}."
            store.add_ones(p + "ln1.gain", (d,))
            store.add_zeros(p + "ln1.bias", (d,))
            for proj in ("wq", "wk", "wv", "wo"):
                store.add_uniform(p + proj, (d, d), rng)
                store.add_zeros(p + proj.replace("w", "b"), (d,))
            store.add_ones(p + "ln2.gain", (d,))
            store.add_zeros(p + "ln2.bias", (d,))
            store.add_uniform(p + "ffn.w1", (d, arch.ffn_dim), rng)
            store.add_zeros(p + "ffn.b1", (arch.ffn_dim,))
            store.add_uniform(p + "ffn.w2", (arch.ffn_dim, d), rng)
            store.add_zeros(p + "ffn.b2", (d,))
        store.add_ones("final.gain", (d,))
        store.add_zeros("final.bias", (d,))
        store.add_uniform("out.w", (d, len(vocab)), rng)
        store.add_zeros("out.b", (len(vocab),))
        store.add_uniform("rate.w1", (d, arch.rating_hidden), rng)
        store.add_zeros("rate.b1", (arch.rating_hidden,))
        store.add_uniform("rate.w2", (arch.rating_hidden, 1), rng)
        store.add_zeros("rate.b2", (1,))
        self.store = store

    def _mask(self, L: int) -> np.ndarray:
        mask = self._masks.get(L)
        if mask is None:
            q = np.arange(L)[:, None]
            k = np.arange(L)[None, :]
            mask = ((k < self.prefix_len) | (k <= q))[None, :, :]
            self._masks[L] = mask
        return mask

    def _run(self, tape: Tape, users, items, aspect_ids, input_ids):
        B, W = input_ids.shape
        L = self.prefix_len + W
        if W - 1 > self.word_capacity:
            raise ValueError(f"text of {W - 1} words exceeds positional capacity")
        store = self.store
        word_table = tape.param(store, "word.emb")
        pieces = [
            tape.embedding(tape.param(store, "user.emb"), users[:, None]),
            tape.embedding(tape.param(store, "item.emb"), items[:, None]),
        ]
        if self.arch.use_aspect:
            pieces.append(tape.embedding(word_table, aspect_ids[:, None]))
        pieces.append(tape.embedding(word_table, input_ids))
        x = tape.concat(pieces, axis=1)
        pos = tape.embedding(tape.param(store, "pos.emb"), np.arange(L))
        x = tape.add(x, tape.broadcast(pos, (B, L, self.arch.embed_dim)))
        mask = self._mask(L)
        for layer in range(self.arch.layers):
            p = f"l{layer}."
            a_in = tape.layer_norm(x, tape.param(store, p + "ln1.gain"),
                                   tape.param(store, p + "ln1.bias"))
            q = tape.affine(a_in, tape.param(store, p + "wq"), tape.param(store, p + "bq"))
            k = tape.affine(a_in, tape.param(store, p + "wk"), tape.param(store, p + "bk"))
            v = tape.affine(a_in, tape.param(store, p + "wv"), tape.param(store, p + "bv"))
            att = tape.attention(q, k, v, mask, self.arch.heads)
            x = tape.add(x, tape.affine(att, tape.param(store, p + "wo"),
                                        tape.param(store, p + "bo")))
            f_in = tape.layer_norm(x, tape.param(store, p + "ln2.gain"),
                                   tape.param(store, p + "ln2.bias"))
            h = tape.nonlin(tape.affine(f_in, tape.param(store, p + "ffn.w1"),
                                        tape.param(store, p + "ffn.b1")), "relu")
            x = tape.add(x, tape.affine(h, tape.param(store, p + "ffn.w2"),
                                        tape.param(store, p + "ffn.b2")))
        xf = tape.layer_norm(x, tape.param(store, "final.gain"), tape.param(store, "final.bias"))
        words = tape.slice_axis(xf, self.prefix_len, L, axis=1)
        logits = tape.affine(words, tape.param(store, "out.w"), tape.param(store, "out.b"))
        item_h = tape.select(xf, 1, axis=1)
        r = tape.nonlin(tape.affine(item_h, tape.param(store, "rate.w1"),
                                    tape.param(store, "rate.b1")), "tanh")
        rating = tape.affine(r, tape.param(store, "rate.w2"), tape.param(store, "rate.b2"))
        return logits, rating

    def loss_nodes(self, tape: Tape, batch: Batch):
        logits, rating = self._run(tape, batch.users, batch.items,
                                   batch.aspect_ids, batch.input_ids)
        nll = tape.softmax_xent(logits, batch.target_ids, batch.pad)
        mse = tape.squared_error(rating, batch.ratings.reshape(-1, 1))
        return nll, mse

    def _check_ids(self, user: int, item: int) -> None:
        if not 0 <= user < self.num_users:
            raise ValueError(f"cold-start user id {user}")
        if not 0 <= item < self.num_items:
            raise ValueError(f"cold-start item id {item}")

    def _aspect_id(self, aspect: str | None, tokens=None) -> int:
        if not self.arch.use_aspect:
            return UNK_ID
        if aspect is None and tokens is not None:
            aspect = extract_aspect(tokens, self.lexicon)
        return self.vocab.token_to_id(aspect) if aspect is not None else UNK_ID

    def _infer(self, user: int, item: int, aspect_id: int, word_ids: list[int]):
        tape = Tape()
        users = np.array([user], dtype=np.int64)
        items = np.array([item], dtype=np.int64)
        aspects = np.array([aspect_id], dtype=np.int64)
        input_ids = np.array([[BOS_ID] + list(word_ids)], dtype=np.int64)
        logits, rating = self._run(tape, users, items, aspects, input_ids)
        return log_softmax(logits.value[0]), float(rating.value[0, 0])

    def token_log_probs(self, user: int, item: int, tokens) -> np.ndarray:
        """Log distributions at each scored position (words then EOS)."""
        self._check_ids(user, item)
        word_ids = [self.vocab.token_to_id(t) for t in tokens]
        aspect_id = self._aspect_id(None, tokens)
        logp, _ = self._infer(user, item, aspect_id, word_ids)
        return logp

    def log_likelihood(self, user: int, item: int, tokens) -> float:
        tokens = list(tokens)
        if not tokens:
            raise ValueError("log_likelihood of empty text")
        logp = self.token_log_probs(user, item, tokens)
        return _sum_target_logprobs(logp, [self.vocab.token_to_id(t) for t in tokens])

    def log_likelihood_many(self, requests, chunk_size: int = 64) -> list[float]:
        """Batched scoring: right-padding never reaches a scored position."""
        out: list[float] = []
        for start in range(0, len(requests), chunk_size):
            out.extend(self._ll_chunk(requests[start:start + chunk_size]))
        return out

    def _ll_chunk(self, chunk) -> list[float]:
        tok_ids = []
        aspects = np.full(len(chunk), UNK_ID, dtype=np.int64)
        for b, (user, item, tokens) in enumerate(chunk):
            self._check_ids(user, item)
            tokens = list(tokens)
            if not tokens:
                raise ValueError("log_likelihood of empty text")
            tok_ids.append([self.vocab.token_to_id(t) for t in tokens])
            if self.arch.use_aspect:
                aspects[b] = self._aspect_id(None, tokens)
        W = max(len(ids) for ids in tok_ids) + 1
        input_ids = np.full((len(chunk), W), PAD_ID, dtype=np.int64)
        for b, ids in enumerate(tok_ids):
            input_ids[b, 0] = BOS_ID
            input_ids[b, 1:len(ids) + 1] = ids
        users = np.array([u for u, _, _ in chunk], dtype=np.int64)
        items = np.array([i for _, i, _ in chunk], dtype=np.int64)
        logits, _ = self._run(Tape(), users, items, aspects, input_ids)
        lp = log_softmax(logits.value)
        return [_sum_target_logprobs(lp[b], ids) for b, ids in enumerate(tok_ids)]

    def predict_rating(self, user: int, item: int, aspect: str | None = None) -> float:
        self._check_ids(user, item)
        _, raw = self._infer(user, item, self._aspect_id(aspect), [])
        return clamp_rating(raw)

    def generate(self, user: int, item: int, aspect: str | None = None,
                 max_len: int | None = None) -> list[str]:
        self._check_ids(user, item)
        if self.arch.use_aspect:
            if aspect is None:
                raise ValueError("aspect-conditioned model needs a conditioning aspect")
            aspect_id = self.vocab.token_to_id(aspect)
        else:
            if aspect is not None:
                raise ValueError("model does not condition on aspects")
            aspect_id = UNK_ID
        max_len = max_len or self.arch.max_len
        words: list[int] = []
        while len(words) < max_len - 1:
            logp, _ = self._infer(user, item, aspect_id, words)
            dist = logp[-1].copy()
            dist[PAD_ID] = -np.inf
            dist[BOS_ID] = -np.inf
            nxt = int(np.argmax(dist))
            if nxt == EOS_ID:
                break
            words.append(nxt)
        return [self.vocab.id_to_token(w) for w in words] + [EOS_TOKEN]

    def architecture_header(self) -> dict:
        return {"kind": "transformer", "num_users": self.num_users,
                "num_items": self.num_items, "vocab_size": len(self.vocab),
                **asdict(self.arch)}


@dataclass(frozen=True)
class RecurrentArch:
    embed_dim: int = 64
    hidden_dim: int = 128
    max_len: int = 24
    rating_hidden: int = 64


class RecurrentModel(ExplainableRecommender):
    """GRU decoder whose initial state is derived from [user; item].

    The rating head is a feed-forward network on the same [user; item]
    concatenation, so ratings do not depend on decoded words.
    """

    def __init__(self, arch: RecurrentArch, vocab: Vocab, num_users: int,
                 num_items: int, seed: int):
        self.arch = arch
        self.vocab = vocab
        self.num_users = num_users
        self.num_items = num_items
        self.seed = seed

        d, H = arch.embed_dim, arch.hidden_dim
        rng = np.random.default_rng([seed, 0x6F0])
        store = ParamStore()
        store.add_uniform("user.emb", (num_users, d), rng)
        store.add_uniform("item.emb", (num_items, d), rng)
        store.add_uniform("word.emb", (len(vocab), d), rng)
        store.add_uniform("init.w", (2 * d, H), rng)
        store.add_zeros("init.b", (H,))
        for gate in ("wz", "wr", "wn"):
            store.add_uniform(f"gru.{gate}", (d + H, H), rng)
            store.add_zeros(f"gru.{gate.replace('w', 'b')}", (H,))
        store.add_uniform("out.w", (H, len(vocab)), rng)
        store.add_zeros("out.b", (len(vocab),))
        store.add_uniform("rate.w1", (2 * d, arch.rating_hidden), rng)
        store.add_zeros("rate.b1", (arch.rating_hidden,))
        store.add_uniform("rate.w2", (arch.rating_hidden, 1), rng)
        store.add_zeros("rate.b2", (1,))
        self.store = store

    def _run(self, tape: Tape, users, items, input_ids):
        store = self.store
        u_e = tape.embedding(tape.param(store, "user.emb"), users)
        i_e = tape.embedding(tape.param(store, "item.emb"), items)
        ui = tape.concat([u_e, i_e], axis=1)
        h = tape.nonlin(tape.affine(ui, tape.param(store, "init.w"),
                                    tape.param(store, "init.b")), "tanh")
        emb = tape.embedding(tape.param(store, "word.emb"), input_ids)
        gate_params = [tape.param(store, n) for n in
                       ("gru.wz", "gru.bz", "gru.wr", "gru.br", "gru.wn", "gru.bn")]
        states = []
        for t in range(input_ids.shape[1]):
            x_t = tape.select(emb, t, axis=1)
            h = tape.gru_cell(x_t, h, *gate_params)
            states.append(h)
        hseq = tape.stack(states, axis=1)
        logits = tape.affine(hseq, tape.param(store, "out.w"), tape.param(store, "out.b"))
        r = tape.nonlin(tape.affine(ui, tape.param(store, "rate.w1"),
                                    tape.param(store, "rate.b1")), "tanh")
        rating = tape.affine(r, tape.param(store, "rate.w2"), tape.param(store, "rate.b2"))
        return logits, rating

    def loss_nodes(self, tape: Tape, batch: Batch):
        logits, rating = self._run(tape, batch.users, batch.items, batch.input_ids)
        nll = tape.softmax_xent(logits, batch.target_ids, batch.pad)
        mse = tape.squared_error(rating, batch.ratings.reshape(-1, 1))
        return nll, mse

    def _check_ids(self, user: int, item: int) -> None:
        if not 0 <= user < self.num_users:
            raise ValueError(f"cold-start user id {user}")
        if not 0 <= item < self.num_items:
            raise ValueError(f"cold-start item id {item}")

    def _infer(self, user: int, item: int, word_ids: list[int]):
        tape = Tape()
        input_ids = np.array([[BOS_ID] + list(word_ids)], dtype=np.int64)
        logits, rating = self._run(tape, np.array([user]), np.array([item]), input_ids)
        return log_softmax(logits.value[0]), float(rating.value[0, 0])

    def token_log_probs(self, user: int, item: int, tokens) -> np.ndarray:
        self._check_ids(user, item)
        logp, _ = self._infer(user, item, [self.vocab.token_to_id(t) for t in tokens])
        return logp

    def log_likelihood(self, user: int, item: int, tokens) -> float:
        tokens = list(tokens)
        if not tokens:
            raise ValueError("log_likelihood of empty text")
        logp = self.token_log_probs(user, item, tokens)
        return _sum_target_logprobs(logp, [self.vocab.token_to_id(t) for t in tokens])

    def log_likelihood_many(self, requests, chunk_size: int = 64) -> list[float]:
        """Batched scoring: the recurrence never carries state into a scored position
        from the right-padding that follows it."""
        out: list[float] = []
        for start in range(0, len(requests), chunk_size):
            out.extend(self._ll_chunk(requests[start:start + chunk_size]))
        return out

    def _ll_chunk(self, chunk) -> list[float]:
        tok_ids = []
        for user, item, tokens in chunk:
            self._check_ids(user, item)
            tokens = list(tokens)
            if not tokens:
                raise ValueError("log_likelihood of empty text")
            tok_ids.append([self.vocab.token_to_id(t) for t in tokens])
        W = max(len(ids) for ids in tok_ids) + 1
        input_ids = np.full((len(chunk), W), PAD_ID, dtype=np.int64)
        for b, ids in enumerate(tok_ids):
            input_ids[b, 0] = BOS_ID
            input_ids[b, 1:len(ids) + 1] = ids
        users = np.array([u for u, _, _ in chunk], dtype=np.int64)
        items = np.array([i for _, i, _ in chunk], dtype=np.int64)
        logits, _ = self._run(Tape(), users, items, input_ids)
        lp = log_softmax(logits.value)
        return [_sum_target_logprobs(lp[b], ids) for b, ids in enumerate(tok_ids)]

    def predict_rating(self, user: int, item: int) -> float:
        self._check_ids(user, item)
        _, raw = self._infer(user, item, [])
        return clamp_rating(raw)

    def generate(self, user: int, item: int, aspect: str | None = None,
                 max_len: int | None = None) -> list[str]:
        self._check_ids(user, item)
        if aspect is not None:
            raise ValueError("model does not condition on aspects")
        max_len = max_len or self.arch.max_len
        words: list[int] = []
        while len(words) < max_len - 1:
            logp, _ = self._infer(user, item, words)
            dist = logp[-1].copy()
            dist[PAD_ID] = -np.inf
            dist[BOS_ID] = -np.inf
            nxt = int(np.argmax(dist))
            if nxt == EOS_ID:
                break
            words.append(nxt)
        return [self.vocab.id_to_token(w) for w in words] + [EOS_TOKEN]

    def architecture_header(self) -> dict:
        return {"kind": "recurrent", "num_users": self.num_users,
                "num_items": self.num_items, "vocab_size": len(self.vocab),
                **asdict(self.arch)}


# ----------------------------------------------------------------------
# reference scorers


class OracleModel(ExplainableRecommender):
    """Regenerates ground truth from the synthetic world.

    Its own text scores log-likelihood zero (perplexity one); any other
    text gets a strictly negative, hash-determined score, so ranking
    metrics should saturate on it.
    """

    privileged = True

    def __init__(self, world):
        from .corpus import render_review  # local import to avoid a cycle
        self._render = render_review
        self.world = world
        self._cache: dict[tuple[int, int], object] = {}

    def _gold(self, user: int, item: int):
        key = (user, item)
        review = self._cache.get(key)
        if review is None:
            review = self._render(self.world, user, item)
            self._cache[key] = review
        return review

    def predict_rating(self, user: int, item: int) -> float:
        return float(self._gold(user, item).rating)

    def generate(self, user: int, item: int, aspect: str | None = None,
                 max_len: int | None = None) -> list[str]:
        return list(self._gold(user, item).tokens) + [EOS_TOKEN]

    def log_likelihood(self, user: int, item: int, tokens) -> float:
        tokens = tuple(tokens)
        if not tokens:
            raise ValueError("log_likelihood of empty text")
        if tokens == self._gold(user, item).tokens:
            return 0.0
        return -1.0 - _unit(self.world.seed, "oracle", user, item, " ".join(tokens))


class RandomScorer(ExplainableRecommender):
    """Seeded i.i.d. scores per (user, item, text); pure, hence memoized."""

    def __init__(self, seed: int, vocab: Vocab | None = None):
        self.seed = seed
        self.vocab = vocab

    def predict_rating(self, user: int, item: int) -> float:
        return 1.0 + 4.0 * _unit(self.seed, "rating", user, item)

    def generate(self, user: int, item: int, aspect: str | None = None,
                 max_len: int | None = None) -> list[str]:
        if self.vocab is None:
            raise ValueError("random generation needs a vocabulary")
        words = self.vocab.tokens()
        rng = np.random.default_rng([self.seed, user, item])
        n = int(rng.integers(3, 9))
        n = min(n, (max_len or 24) - 1)
        return [words[int(rng.integers(len(words)))] for _ in range(n)] + [EOS_TOKEN]

    def log_likelihood(self, user: int, item: int, tokens) -> float:
        tokens = list(tokens)
        if not tokens:
            raise ValueError("log_likelihood of empty text")
        return float(np.log(_unit(self.seed, "ll", user, item, " ".join(tokens))))


class UniformScorer(ExplainableRecommender):
    """Assigns every token probability 1/V; perplexity is exactly V."""

    def __init__(self, vocab_size: int):
        if vocab_size < 1:
            raise ValueError("vocab size must be positive")
        self.vocab_size = vocab_size

    def predict_rating(self, user: int, item: int) -> float:
        return 3.0

    def generate(self, user: int, item: int, aspect: str | None = None,
                 max_len: int | None = None) -> list[str]:
        return [EOS_TOKEN]

    def log_likelihood(self, user: int, item: int, tokens) -> float:
        tokens = list(tokens)
        if not tokens:
            raise ValueError("log_likelihood of empty text")
        return -(len(tokens) + 1) * float(np.log(self.vocab_size))


class UnigramModel(ExplainableRecommender):
    """Add-alpha unigram baseline fit on the training split."""

    def __init__(self, log_probs: np.ndarray, mean_rating: float, vocab: Vocab):
        self.log_probs = log_probs
        self.mean_rating = mean_rating
        self.vocab = vocab

    @classmethod
    def fit(cls, corpus, alpha: float = 0.1) -> "UnigramModel":
        vocab = corpus.vocab
        counts = np.zeros(len(vocab), dtype=np.float64)
        for review in corpus.train:
            for tid in vocab.encode(review.tokens, append_eos=True):
                counts[tid] += 1
        log_probs = np.log((counts + alpha) / (counts.sum() + alpha * len(vocab)))
        mean_rating = float(np.mean([r.rating for r in corpus.train]))
        return cls(log_probs, mean_rating, vocab)

    def predict_rating(self, user: int, item: int) -> float:
        return clamp_rating(self.mean_rating)

    def generate(self, user: int, item: int, aspect: str | None = None,
                 max_len: int | None = None) -> list[str]:
        word_ids = np.argsort(-self.log_probs)
        for tid in word_ids:
            if int(tid) >= len(RESERVED_TOKENS):
                return [self.vocab.id_to_token(int(tid)), EOS_TOKEN]
        return [EOS_TOKEN]

    def log_likelihood(self, user: int, item: int, tokens) -> float:
        tokens = list(tokens)
        if not tokens:
            raise ValueError("log_likelihood of empty text")
        ids = self.vocab.encode(tokens, append_eos=True)
        return float(self.log_probs[ids].sum())


def model_from_checkpoint(path, vocab: Vocab, lexicon=None):
    """Rebuild a trained model from a checkpoint header and parameters."""
    store, header = load_checkpoint(path)
    desc = header.get("model")
    if not desc:
        raise ValueError(f"{path}: checkpoint lacks a model description")
    if desc["vocab_size"] != len(vocab):
        raise ValueError(f"{path}: vocab size {desc['vocab_size']} != corpus {len(vocab)}")
    kind = desc["kind"]
    if kind == "transformer":
        arch = TransformerArch(**{f: desc[f] for f in TransformerArch.__dataclass_fields__})
        model = TransformerModel(arch, vocab, desc["num_users"], desc["num_items"],
                                 seed=header["seed"], lexicon=lexicon)
    elif kind == "recurrent":
        arch = RecurrentArch(**{f: desc[f] for f in RecurrentArch.__dataclass_fields__})
        model = RecurrentModel(arch, vocab, desc["num_users"], desc["num_items"],
                               seed=header["seed"])
    else:
        raise ValueError(f"{path}: unknown model kind '{kind}'")
    model.store.load_state({name: store[name] for name in store.names()})
    model.store.step = store.step
    return model
