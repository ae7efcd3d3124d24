"""Faithfulness and coherence metrics over explanation-generating models.

Faithfulness ranks texts by model perplexity: sentiment-negation
invariance (AIR), mean reciprocal rank of the gold review against
aspect-substituted alternatives (MRR-AE), and agreement between a
text-only rating regressor and the model's own rating (TLAE).
Coherence compares generated text against the gold review: an
aspect+polarity entailment proxy, greedy embedding matching, and a
reference-conditioned bigram NLL. All aggregates accumulate in
instance order with plain float sums so results are independent of any
worker scheduling, and every metric can stream per-instance rows to an
audit callback for external recomputation.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape
from .lexicon import (PAD_ID, UNK_ID, RESERVED_TOKENS, Lexicon, Vocab,
                      classify_polarity, extract_aspect)
from .models import clamp_rating
from .nn import ParamStore, clip_global_norm
from .perturb import negate_sentiment, sample_distinct, substitute_aspect
from .training import DivergenceError

HIGHER = "higher"
LOWER = "lower"


@dataclass(frozen=True)
class MetricResult:
    """One aggregate number plus the bookkeeping needed to audit it."""

    name: str
    value: float
    count: int
    excluded: int
    direction: str
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"{self.name}: no evaluated instances")
        if self.excluded < 0:
            raise ValueError(f"{self.name}: negative excluded count")
        if self.direction not in (HIGHER, LOWER):
            raise ValueError(f"{self.name}: direction must be higher or lower")
        if not math.isfinite(self.value):
            raise ValueError(f"{self.name}: non-finite value")

    @property
    def attempted(self) -> int:
        return self.count + self.excluded

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "count": self.count,
                "excluded": self.excluded, "direction": self.direction,
                "config": dict(self.config)}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricResult":
        return cls(d["name"], d["value"], d["count"], d["excluded"],
                   d["direction"], dict(d.get("config", {})))


class AuditWriter:
    """Collects one row per evaluated instance and writes them as TSV."""

    def __init__(self):
        self.rows: list[dict] = []

    def __call__(self, **fields) -> None:
        self.rows.append(fields)

    @staticmethod
    def _format(value) -> str:
        if isinstance(value, bool):
            return "1" if value else "0"
        if isinstance(value, float):
            return repr(value)
        return str(value)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            if not self.rows:
                return
            columns = list(self.rows[0])
            fh.write("\t".join(columns) + "\n")
            for row in self.rows:
                fh.write("\t".join(self._format(row[c]) for c in columns) + "\n")


# ----------------------------------------------------------------------
# faithfulness: sentiment-negation invariance


def air(model, reviews, lexicon: Lexicon, *, texts=None, min_rating: int = 4,
        source: str = "ground-truth", name: str = "air", audit=None) -> MetricResult:
    """Percentage of positive reviews whose sentiment-negated rewrite does
    NOT receive strictly lower perplexity; ties count as invariant."""
    if texts is not None and len(texts) != len(reviews):
        raise ValueError("texts must align with reviews")
    pool = []
    excluded = 0
    for idx, review in enumerate(reviews):
        if review.rating < min_rating:
            continue
        tokens = list(texts[idx]) if texts is not None else list(review.tokens)
        if not tokens:
            excluded += 1
            continue
        pair = negate_sentiment(tokens, lexicon)
        if pair is None:
            excluded += 1
            continue
        pool.append((review, pair))
    if not pool:
        raise ValueError("empty AIR pool")
    requests = []
    for review, pair in pool:
        requests.append((review.user, review.item, pair.original))
        requests.append((review.user, review.item, pair.perturbed))
    ppls = model.perplexity_many(requests)
    flipped = 0
    for j, (review, pair) in enumerate(pool):
        ppl_orig = ppls[2 * j]
        ppl_neg = ppls[2 * j + 1]
        is_flipped = ppl_neg < ppl_orig
        flipped += is_flipped
        if audit is not None:
            audit(instance=f"{review.user}:{review.item}", ppl_original=ppl_orig,
                  ppl_negated=ppl_neg, flipped=is_flipped)
    value = 100.0 * (1.0 - flipped / len(pool))
    return MetricResult(name, value, len(pool), excluded, HIGHER,
                        {"min_rating": min_rating, "source": source})


# ----------------------------------------------------------------------
# faithfulness: gold-vs-substituted-candidates ranking


def mrr_ae(model, reviews, lexicon: Lexicon, *, k: int = 100, seed: int = 0,
           audit=None) -> MetricResult:
    """Mean reciprocal rank (x100) of each gold review ranked by perplexity
    against k candidates carrying the gold aspect.

    Candidates are drawn from the same review pool excluding only texts
    identical to the gold text; the gold takes the worst rank among
    ties. Candidates without any aspect term are used unchanged.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not reviews:
        raise ValueError("empty review pool")
    texts = [review.text for review in reviews]
    dups = Counter(texts)
    rr_sum = 0.0
    for idx, gold in enumerate(reviews):
        eligible = len(reviews) - dups[texts[idx]]
        if eligible < k:
            raise ValueError(f"not enough distinct candidates: {eligible} < k={k}")
        if eligible == k:
            chosen = [j for j in range(len(reviews)) if texts[j] != texts[idx]]
        else:
            rng = np.random.default_rng([seed, 0x3A3, idx])
            chosen = sample_distinct(rng, len(reviews), k,
                                     lambda j: texts[j] == texts[idx])
        requests = [(gold.user, gold.item, gold.tokens)]
        for j in chosen:
            pair = substitute_aspect(reviews[j].tokens, gold.aspect, lexicon)
            requests.append((gold.user, gold.item,
                             pair.perturbed if pair is not None else reviews[j].tokens))
        ppls = model.perplexity_many(requests)
        ppl_gold = ppls[0]
        rank = 1 + sum(p < ppl_gold for p in ppls[1:]) + sum(p == ppl_gold for p in ppls[1:])
        rr_sum += 1.0 / rank
        if audit is not None:
            audit(instance=f"{gold.user}:{gold.item}", rank=rank,
                  reciprocal_rank=1.0 / rank, ppl_gold=ppl_gold,
                  n_candidates=len(chosen))
    value = 100.0 * (rr_sum / len(reviews))
    return MetricResult("mrr_ae", value, len(reviews), 0, HIGHER,
                        {"k": k, "seed": seed,
                         "candidate_exclusion": "textual-duplicates-only"})


def mrr_random_baseline(k: int) -> float:
    """Expected MRR (x100) of a uniformly random ranker over k+1 texts."""
    return 100.0 * sum(1.0 / r for r in range(1, k + 2)) / (k + 1)


# ----------------------------------------------------------------------
# faithfulness: text-label agreement


class AuxRegressor:
    """Attention-pooled text-only rating regressor.

    Word embeddings are pooled by a learned attention query and fed to
    a small feed-forward head; the input is text alone, so predictions
    cannot depend on who wrote the review or about what item.
    """

    def __init__(self, vocab: Vocab, embed_dim: int = 32, hidden_dim: int = 32,
                 seed: int = 0):
        self.vocab = vocab
        self.embed_dim = embed_dim
        rng = np.random.default_rng([seed, 0xA0C])
        store = ParamStore()
        store.add_uniform("word.emb", (len(vocab), embed_dim), rng)
        store.add_uniform("query", (embed_dim,), rng)
        store.add_uniform("head.w1", (embed_dim, hidden_dim), rng)
        store.add_zeros("head.b1", (hidden_dim,))
        store.add_uniform("head.w2", (hidden_dim, 1), rng)
        store.add_zeros("head.b2", (1,))
        self.store = store
        self.validation_mse: float | None = None

    def _run(self, tape: Tape, input_ids: np.ndarray, pad: np.ndarray):
        store = self.store
        emb = tape.embedding(tape.param(store, "word.emb"), input_ids)
        query = tape.broadcast(tape.param(store, "query"),
                               (input_ids.shape[0], 1, self.embed_dim))
        mask = (~pad)[:, None, :]
        pooled = tape.select(tape.attention(query, emb, emb, mask, 1), 0, axis=1)
        h = tape.nonlin(tape.affine(pooled, tape.param(store, "head.w1"),
                                    tape.param(store, "head.b1")), "tanh")
        return tape.affine(h, tape.param(store, "head.w2"), tape.param(store, "head.b2"))

    def _encode(self, texts) -> tuple[np.ndarray, np.ndarray]:
        ids = []
        for tokens in texts:
            tokens = [t for t in tokens if t not in RESERVED_TOKENS]
            if not tokens:
                raise ValueError("cannot score empty text")
            ids.append([self.vocab.token_to_id(t) for t in tokens])
        T = max(len(row) for row in ids)
        input_ids = np.full((len(ids), T), PAD_ID, dtype=np.int64)
        pad = np.ones((len(ids), T), dtype=bool)
        for b, row in enumerate(ids):
            input_ids[b, :len(row)] = row
            pad[b, :len(row)] = False
        return input_ids, pad

    def predict_many(self, texts, chunk_size: int = 256) -> np.ndarray:
        out = np.empty(len(texts), dtype=np.float64)
        for start in range(0, len(texts), chunk_size):
            chunk = texts[start:start + chunk_size]
            input_ids, pad = self._encode(chunk)
            raw = self._run(Tape(), input_ids, pad).value[:, 0]
            out[start:start + len(chunk)] = np.clip(raw, 1.0, 5.0)
        return out

    def predict(self, tokens) -> float:
        return float(self.predict_many([list(tokens)])[0])


def train_aux_regressor(corpus, *, embed_dim: int = 32, hidden_dim: int = 32,
                        epochs: int = 12, lr: float = 3e-3, batch_size: int = 64,
                        patience: int = 3, clip_norm: float = 5.0, seed: int = 0,
                        log=None, ratings=None) -> AuxRegressor:
    """Fit the text-only regressor on the train split, selecting the epoch
    with the best validation MSE.

    `ratings` optionally overrides the train-split targets (same order);
    used by label-permutation controls.
    """
    if not corpus.train:
        raise ValueError("empty train split")
    reg = AuxRegressor(corpus.vocab, embed_dim, hidden_dim, seed)
    train_texts = [list(r.tokens) for r in corpus.train]
    train_targets = np.array([r.rating for r in corpus.train], dtype=np.float64) \
        if ratings is None else np.asarray(ratings, dtype=np.float64)
    if train_targets.shape[0] != len(train_texts):
        raise ValueError("ratings must align with the train split")
    val_texts = [list(r.tokens) for r in corpus.validation]
    val_targets = [float(r.rating) for r in corpus.validation]
    # center the head at the mean target so the [1, 5] clamp is not
    # saturated at init and validation selection sees progress immediately
    reg.store["head.b2"][:] = float(train_targets.mean())
    rng = np.random.default_rng([seed, 0xA0C, 1])
    best = np.inf
    best_state = reg.store.state_copy()
    flat = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_texts))
        try:
            for start in range(0, len(train_texts), batch_size):
                rows = order[start:start + batch_size]
                input_ids, pad = reg._encode([train_texts[j] for j in rows])
                tape = Tape()
                pred = reg._run(tape, input_ids, pad)
                loss = tape.squared_error(pred, train_targets[rows].reshape(-1, 1))
                tape.backward(loss)
                grads, norm = clip_global_norm(tape.param_grads(reg.store), clip_norm)
                if not np.isfinite(norm):
                    raise FloatingPointError("non-finite gradient norm")
                reg.store.adam_step(grads, lr)
        except FloatingPointError as exc:
            raise DivergenceError(
                f"regressor diverged in epoch {epoch}: {exc}", epoch - 1) from exc
        val_mse = _mse(reg.predict_many(val_texts), val_targets)
        if log is not None:
            log(f"regressor epoch {epoch}: val mse {val_mse:.4f}")
        if val_mse < best:
            best = val_mse
            best_state = reg.store.state_copy()
            flat = 0
        else:
            flat += 1
            if flat >= patience:
                break
    reg.store.load_state(best_state)
    reg.validation_mse = best
    return reg


def _mse(pred, target) -> float:
    total = 0.0
    n = 0
    for p, t in zip(pred, target, strict=True):
        d = float(p) - float(t)
        total += d * d
        n += 1
    if n == 0:
        raise ValueError("mse of empty input")
    return total / n


def tlae(regressor: AuxRegressor, generations, *, target: str = "model-rating",
         name: str = "tlae", audit=None) -> MetricResult:
    """MSE between the regressor's reading of each generated text and the
    target rating; empty generations are excluded and counted."""
    if not generations:
        raise ValueError("no generations to score")
    kept = []
    excluded = 0
    for user, item, tokens, target_rating in generations:
        words = [t for t in tokens if t not in RESERVED_TOKENS]
        if not words:
            excluded += 1
            continue
        kept.append((user, item, words, float(target_rating)))
    if not kept:
        raise ValueError("all generations empty")
    preds = regressor.predict_many([words for _, _, words, _ in kept])
    total = 0.0
    for j, (user, item, _, target_rating) in enumerate(kept):
        d = float(preds[j]) - target_rating
        total += d * d
        if audit is not None:
            audit(instance=f"{user}:{item}", regressor_rating=float(preds[j]),
                  target_rating=target_rating, squared_error=d * d)
    return MetricResult(name, total / len(kept), len(kept), excluded, LOWER,
                        {"target": target})


# ----------------------------------------------------------------------
# coherence: aspect+polarity entailment proxy


def entail_proxy(generated, reference, lexicon: Lexicon) -> bool:
    """True iff both texts name the same aspect and carry the same polarity."""
    gen_aspect = extract_aspect(generated, lexicon)
    if gen_aspect is None or gen_aspect != extract_aspect(reference, lexicon):
        return False
    return classify_polarity(generated, lexicon) == classify_polarity(reference, lexicon)


def entail_metric(instances, lexicon: Lexicon, audit=None) -> MetricResult:
    """Percentage of (user, item, generated, reference) instances entailed;
    empty generations are excluded and counted."""
    if not instances:
        raise ValueError("no instances to score")
    hits = 0
    count = 0
    excluded = 0
    for user, item, generated, reference in instances:
        words = [t for t in generated if t not in RESERVED_TOKENS]
        if not words:
            excluded += 1
            continue
        ok = entail_proxy(words, list(reference), lexicon)
        hits += ok
        count += 1
        if audit is not None:
            audit(instance=f"{user}:{item}", entailed=ok)
    if count == 0:
        raise ValueError("all generations empty")
    return MetricResult("entail", 100.0 * hits / count, count, excluded, HIGHER, {})


# ----------------------------------------------------------------------
# coherence: greedy embedding matching


class EmbeddingTable:
    """Token vectors with cached pairwise cosine similarity."""

    def __init__(self, vocab: Vocab, vectors: np.ndarray):
        if vectors.shape[0] != len(vocab):
            raise ValueError("vectors must cover the vocabulary")
        self.vocab = vocab
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self._norms = np.sqrt((self.vectors * self.vectors).sum(axis=1))
        self._cache: dict[tuple[int, int], float] = {}

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.vocab.token_to_id(token)]

    def cosine(self, a: str, b: str) -> float:
        ia = self.vocab.token_to_id(a)
        ib = self.vocab.token_to_id(b)
        key = (ia, ib) if ia <= ib else (ib, ia)
        hit = self._cache.get(key)
        if hit is None:
            na = self._norms[key[0]]
            nb = self._norms[key[1]]
            if na == 0.0 or nb == 0.0:
                hit = 0.0
            else:
                hit = float(self.vectors[key[0]] @ self.vectors[key[1]] / (na * nb))
            self._cache[key] = hit
        return hit


def train_cooccurrence_embeddings(corpus, dim: int = 32, window: int = 2) -> EmbeddingTable:
    """PPMI co-occurrence factorization over the train split.

    Counts are collected in a +-window around each token, the positive
    PMI matrix is factorized by SVD, and each component is
    sign-normalized so the decomposition is reproducible. The UNK row
    is a constant vector so unseen tokens still have a direction.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    vocab = corpus.vocab
    V = len(vocab)
    counts = np.zeros((V, V), dtype=np.float64)
    for review in corpus.train:
        ids = vocab.encode(review.tokens, append_eos=False)
        for pos, tid in enumerate(ids):
            lo = max(0, pos - window)
            for ctx in ids[lo:pos]:
                counts[tid, ctx] += 1
                counts[ctx, tid] += 1
    total = counts.sum()
    if total == 0:
        raise ValueError("no co-occurrences in the train split")
    row = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(counts * total / np.outer(row, row))
    pmi[~np.isfinite(pmi)] = 0.0
    ppmi = np.maximum(pmi, 0.0)
    u, s, _ = np.linalg.svd(ppmi)
    dim = min(dim, len(s))
    vectors = u[:, :dim] * np.sqrt(s[:dim])
    for col in range(dim):
        anchor = int(np.argmax(np.abs(vectors[:, col])))
        if vectors[anchor, col] < 0:
            vectors[:, col] = -vectors[:, col]
    vectors[UNK_ID] = 1.0 / math.sqrt(dim)
    return EmbeddingTable(vocab, vectors)


def greedy_match_f1(generated, reference, table: EmbeddingTable) -> tuple[float, float, float]:
    """Greedy token matching by cosine: precision over generated tokens,
    recall over reference tokens, and their harmonic mean."""
    generated = list(generated)
    reference = list(reference)
    if not generated or not reference:
        raise ValueError("cannot match empty text")
    p_total = 0.0
    for g in generated:
        p_total += max(table.cosine(g, r) for r in reference)
    r_total = 0.0
    for r in reference:
        r_total += max(table.cosine(r, g) for g in generated)
    precision = p_total / len(generated)
    recall = r_total / len(reference)
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


def gm_f1_metric(instances, table: EmbeddingTable, audit=None) -> MetricResult:
    """Mean greedy-match F1 over (user, item, generated, reference) instances."""
    if not instances:
        raise ValueError("no instances to score")
    total = 0.0
    count = 0
    excluded = 0
    for user, item, generated, reference in instances:
        words = [t for t in generated if t not in RESERVED_TOKENS]
        if not words:
            excluded += 1
            continue
        precision, recall, f1 = greedy_match_f1(words, list(reference), table)
        total += f1
        count += 1
        if audit is not None:
            audit(instance=f"{user}:{item}", precision=precision, recall=recall, f1=f1)
    if count == 0:
        raise ValueError("all generations empty")
    return MetricResult("gm_f1", total / count, count, excluded, HIGHER, {})


# ----------------------------------------------------------------------
# coherence: reference-conditioned NLL


class BigramLM:
    """Add-alpha bigram language model over the corpus vocabulary."""

    def __init__(self, vocab: Vocab, counts: np.ndarray, unigram: np.ndarray,
                 alpha: float):
        self.vocab = vocab
        self.alpha = alpha
        self._bigram = counts
        self._context = counts.sum(axis=1)
        self._unigram = unigram
        self._uni_total = float(unigram.sum())

    @classmethod
    def fit(cls, corpus, alpha: float = 0.1) -> "BigramLM":
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        vocab = corpus.vocab
        V = len(vocab)
        counts = np.zeros((V, V), dtype=np.float64)
        unigram = np.zeros(V, dtype=np.float64)
        for review in corpus.train:
            ids = vocab.encode(review.tokens, append_eos=False)
            for tid in ids:
                unigram[tid] += 1
            for prev, nxt in zip(ids[:-1], ids[1:]):
                counts[prev, nxt] += 1
        return cls(vocab, counts, unigram, alpha)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def unigram_prob(self, tid: int) -> float:
        return (self._unigram[tid] + self.alpha) / (self._uni_total + self.alpha * self.vocab_size)

    def bigram_prob(self, prev: int, tid: int) -> float:
        return (self._bigram[prev, tid] + self.alpha) / (self._context[prev] + self.alpha * self.vocab_size)

    def nll(self, tokens) -> float:
        """Mean negative log-probability of the tokens under this model alone."""
        tokens = list(tokens)
        if not tokens:
            raise ValueError("cannot score empty text")
        ids = [self.vocab.token_to_id(t) for t in tokens]
        total = -math.log(self.unigram_prob(ids[0]))
        for prev, tid in zip(ids[:-1], ids[1:]):
            total += -math.log(self.bigram_prob(prev, tid))
        return total / len(ids)


def cond_nll_score(generated, reference, lm: BigramLM, weight: float = 0.5) -> float:
    """Mean NLL of the generated text under the corpus bigram model
    interpolated with the reference's own bigram statistics.

    The reference model only contributes where the current context token
    actually occurs as a context in the reference, so a generation
    sharing no token with the reference scores exactly the corpus NLL.
    """
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must be in [0, 1]")
    generated = list(generated)
    reference = list(reference)
    if not generated:
        raise ValueError("cannot score empty generated text")
    if not reference:
        raise ValueError("cannot score empty reference text")
    ref_ids = [lm.vocab.token_to_id(t) for t in reference]
    ref_counts: dict[int, Counter] = {}
    for prev, nxt in zip(ref_ids[:-1], ref_ids[1:]):
        ref_counts.setdefault(prev, Counter())[nxt] += 1
    ids = [lm.vocab.token_to_id(t) for t in generated]
    total = -math.log(lm.unigram_prob(ids[0]))
    for prev, tid in zip(ids[:-1], ids[1:]):
        p = lm.bigram_prob(prev, tid)
        transitions = ref_counts.get(prev)
        if transitions is not None:
            ref_p = transitions[tid] / sum(transitions.values())
            p = weight * ref_p + (1.0 - weight) * p
        total += -math.log(p)
    return total / len(ids)


def cnll_metric(instances, lm: BigramLM, weight: float = 0.5, audit=None) -> MetricResult:
    """Mean conditioned NLL over (user, item, generated, reference) instances."""
    if not instances:
        raise ValueError("no instances to score")
    total = 0.0
    count = 0
    excluded = 0
    for user, item, generated, reference in instances:
        words = [t for t in generated if t not in RESERVED_TOKENS]
        if not words:
            excluded += 1
            continue
        score = cond_nll_score(words, list(reference), lm, weight)
        total += score
        count += 1
        if audit is not None:
            audit(instance=f"{user}:{item}", score=score)
    if count == 0:
        raise ValueError("all generations empty")
    return MetricResult("cnll", total / count, count, excluded, LOWER,
                        {"weight": weight})


# ----------------------------------------------------------------------
# recommendation error


def rmse(predicted, gold) -> float:
    predicted = [float(x) for x in predicted]
    gold = [float(x) for x in gold]
    if len(predicted) != len(gold):
        raise ValueError(f"length mismatch: {len(predicted)} vs {len(gold)}")
    if not predicted:
        raise ValueError("rmse of empty input")
    total = 0.0
    for p, g in zip(predicted, gold):
        d = p - g
        total += d * d
    return math.sqrt(total / len(predicted))


def rmse_metric(instances, audit=None) -> MetricResult:
    """RMSE over (user, item, predicted, gold) rating instances."""
    if not instances:
        raise ValueError("no instances to score")
    preds = []
    golds = []
    for user, item, predicted, gold in instances:
        preds.append(clamp_rating(predicted))
        golds.append(float(gold))
        if audit is not None:
            d = preds[-1] - golds[-1]
            audit(instance=f"{user}:{item}", predicted=preds[-1], gold=golds[-1],
                  squared_error=d * d)
    return MetricResult("rmse", rmse(preds, golds), len(preds), 0, LOWER, {})
