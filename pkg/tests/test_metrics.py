"""Faithfulness and coherence metric behavior against hand oracles."""

import dataclasses
import math
from types import SimpleNamespace

import numpy as np
import pytest

from rexeval.lexicon import NEGATIVE, UNK_ID, Vocab, classify_polarity
from rexeval.metrics import (HIGHER, LOWER, AuditWriter, AuxRegressor,
                             BigramLM, EmbeddingTable, MetricResult, air,
                             cnll_metric, cond_nll_score, entail_metric,
                             entail_proxy, gm_f1_metric, greedy_match_f1,
                             mrr_ae, mrr_random_baseline, rmse, rmse_metric,
                             tlae, train_aux_regressor,
                             train_cooccurrence_embeddings)
from rexeval.models import RandomScorer, UniformScorer


class _ScriptedScorer:
    """Assigns perplexities via a user-supplied function of the request."""

    def __init__(self, fn):
        self.fn = fn

    def perplexity_many(self, requests):
        return [self.fn(user, item, tokens) for user, item, tokens in requests]


# ----------------------------------------------------------------------
# result container and audit writer


def test_metric_result_validation():
    ok = MetricResult("m", 1.5, count=4, excluded=2, direction=LOWER, config={"k": 3})
    assert ok.attempted == 6
    assert MetricResult.from_dict(ok.to_dict()) == ok
    with pytest.raises(ValueError, match="no evaluated instances"):
        MetricResult("m", 1.0, count=0, excluded=0, direction=LOWER)
    with pytest.raises(ValueError, match="negative excluded"):
        MetricResult("m", 1.0, count=1, excluded=-1, direction=LOWER)
    with pytest.raises(ValueError, match="direction"):
        MetricResult("m", 1.0, count=1, excluded=0, direction="sideways")
    with pytest.raises(ValueError, match="non-finite"):
        MetricResult("m", math.nan, count=1, excluded=0, direction=HIGHER)


def test_audit_writer_formats_rows(tmp_path):
    writer = AuditWriter()
    writer(instance="0:1", flipped=True, score=0.5)
    writer(instance="2:3", flipped=False, score=1.25)
    path = tmp_path / "audit.tsv"
    writer.dump(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == ["instance\tflipped\tscore", "0:1\t1\t0.5", "2:3\t0\t1.25"]
    empty = tmp_path / "empty.tsv"
    AuditWriter().dump(empty)
    assert empty.read_text(encoding="utf-8") == ""


# ----------------------------------------------------------------------
# sentiment-negation invariance


def test_air_counts_ties_as_invariant(small_corpus, lexicon):
    reviews = small_corpus.test
    result = air(UniformScorer(len(small_corpus.vocab)), reviews, lexicon)
    assert result.value == 100.0
    assert result.direction == HIGHER
    assert result.config == {"min_rating": 4, "source": "ground-truth"}
    assert result.count + result.excluded == sum(r.rating >= 4 for r in reviews)


def test_air_value_matches_flip_count(small_corpus, lexicon):
    reviews = small_corpus.test

    def scripted(user, item, tokens):
        # reward the negated rewrite for even users only
        if classify_polarity(tokens, lexicon) == NEGATIVE and user % 2 == 0:
            return 0.5
        return 2.0

    writer = AuditWriter()
    result = air(_ScriptedScorer(scripted), reviews, lexicon, audit=writer)
    pool = [r for r in reviews if r.rating >= 4]
    flipped = sum(r.user % 2 == 0 for r in pool)
    assert result.value == 100.0 * (1.0 - flipped / len(pool))
    assert result.count == len(pool)
    assert len(writer.rows) == result.count
    assert sum(row["flipped"] for row in writer.rows) == flipped
    assert set(writer.rows[0]) == {"instance", "ppl_original", "ppl_negated", "flipped"}


def test_air_exclusions_and_errors(small_corpus, lexicon):
    reviews = small_corpus.test
    texts = [list(r.tokens) for r in reviews]
    positives = [i for i, r in enumerate(reviews) if r.rating >= 4]
    texts[positives[0]] = []                      # nothing to score
    texts[positives[1]] = ["the", "food"]         # no opinion to negate
    scorer = UniformScorer(len(small_corpus.vocab))
    result = air(scorer, reviews, lexicon, texts=texts, source="generated")
    assert result.excluded == 2
    assert result.count == len(positives) - 2
    assert result.config["source"] == "generated"
    with pytest.raises(ValueError, match="align"):
        air(scorer, reviews, lexicon, texts=texts[:-1])
    with pytest.raises(ValueError, match="empty AIR pool"):
        air(scorer, reviews, lexicon, min_rating=6)


# ----------------------------------------------------------------------
# gold-vs-substituted ranking


def test_mrr_worst_tie_rank_under_uniform_scorer(small_corpus, lexicon):
    reviews = small_corpus.test[:12]
    writer = AuditWriter()
    result = mrr_ae(UniformScorer(len(small_corpus.vocab)), reviews, lexicon,
                    k=1, seed=0, audit=writer)
    # every candidate ties with the gold, which then takes rank 2
    assert result.value == 50.0
    assert result.count == 12
    assert all(row["rank"] == 2 and row["n_candidates"] == 1 for row in writer.rows)
    assert result.config["k"] == 1


def test_mrr_determinism_and_errors(small_corpus, lexicon):
    reviews = small_corpus.test[:20]
    scorer = RandomScorer(seed=6)
    a = mrr_ae(scorer, reviews, lexicon, k=5, seed=2)
    b = mrr_ae(scorer, reviews, lexicon, k=5, seed=2)
    assert a.value == b.value
    with pytest.raises(ValueError, match="k must be"):
        mrr_ae(scorer, reviews, lexicon, k=0)
    with pytest.raises(ValueError, match="not enough distinct"):
        mrr_ae(scorer, reviews, lexicon, k=len(reviews))
    with pytest.raises(ValueError, match="empty review pool"):
        mrr_ae(scorer, [], lexicon, k=1)


def test_mrr_random_baseline_values():
    assert mrr_random_baseline(1) == pytest.approx(75.0)
    # 100/(k+1) * H(k+1) for k=100
    h = sum(1.0 / r for r in range(1, 102))
    assert mrr_random_baseline(100) == pytest.approx(100.0 * h / 101.0)


# ----------------------------------------------------------------------
# text-only rating regressor and TLAE


def test_regressor_predicts_from_text_alone(small_corpus):
    reg = AuxRegressor(small_corpus.vocab, embed_dim=16, hidden_dim=16, seed=3)
    tokens = list(small_corpus.test[0].tokens)
    single = reg.predict(tokens)
    assert 1.0 <= single <= 5.0
    many = reg.predict_many([tokens, tokens + ["<eos>"]])
    assert many[0] == single      # reserved tokens are stripped before scoring
    assert many[1] == single
    with pytest.raises(ValueError, match="empty text"):
        reg.predict(["<eos>"])


def test_regressor_training_learns_the_rating_signal(small_corpus):
    lines = []
    reg = train_aux_regressor(small_corpus, embed_dim=16, hidden_dim=16,
                              seed=5, log=lines.append)
    val_ratings = [float(r.rating) for r in small_corpus.validation]
    mean_train = float(np.mean([r.rating for r in small_corpus.train]))
    baseline = float(np.mean([(v - mean_train) ** 2 for v in val_ratings]))
    assert reg.validation_mse is not None
    assert reg.validation_mse < baseline
    assert lines and lines[0].startswith("regressor epoch 1:")

    # permuting the labels removes the signal the regressor just found
    rng = np.random.default_rng(8)
    permuted = rng.permutation([r.rating for r in small_corpus.train])
    control = train_aux_regressor(small_corpus, embed_dim=16, hidden_dim=16,
                                  seed=5, ratings=permuted)
    assert control.validation_mse > reg.validation_mse


def test_regressor_training_input_validation(small_corpus):
    with pytest.raises(ValueError, match="align"):
        train_aux_regressor(small_corpus, ratings=[1.0, 2.0])
    with pytest.raises(ValueError, match="empty train split"):
        train_aux_regressor(dataclasses.replace(small_corpus, train=[]))


def test_tlae_matches_external_recomputation(small_corpus):
    reg = AuxRegressor(small_corpus.vocab, embed_dim=16, hidden_dim=16, seed=3)
    gens = [(r.user, r.item, list(r.tokens) + ["<eos>"], float(r.rating))
            for r in small_corpus.test[:8]]
    gens.append((0, 0, ["<eos>"], 3.0))  # empty after stripping
    writer = AuditWriter()
    result = tlae(reg, gens, audit=writer)
    preds = reg.predict_many([g[2][:-1] for g in gens[:8]])
    expected = 0.0
    for j, (_, _, _, target) in enumerate(gens[:8]):
        d = float(preds[j]) - target
        expected += d * d
    assert result.value == expected / 8
    assert (result.count, result.excluded) == (8, 1)
    assert result.direction == LOWER
    assert len(writer.rows) == 8
    with pytest.raises(ValueError, match="no generations"):
        tlae(reg, [])
    with pytest.raises(ValueError, match="all generations empty"):
        tlae(reg, [(0, 0, ["<eos>"], 3.0)])


# ----------------------------------------------------------------------
# entailment proxy


def test_entail_proxy_truth_table(lexicon):
    ref = ["the", "food", "was", "great"]
    assert entail_proxy(["great", "food"], ref, lexicon)
    assert not entail_proxy(["great", "service"], ref, lexicon)   # wrong aspect
    assert not entail_proxy(["terrible", "food"], ref, lexicon)   # wrong polarity
    assert not entail_proxy(["simply", "great"], ref, lexicon)    # no aspect named
    assert entail_proxy(["food", "okay"], ["the", "food", "was", "okay"], lexicon)


def test_entail_metric_counts(lexicon):
    ref = ["the", "food", "was", "great"]
    instances = [
        (0, 0, ["great", "food", "<eos>"], ref),
        (0, 1, ["terrible", "food"], ref),
        (1, 0, ["<eos>"], ref),
    ]
    result = entail_metric(instances, lexicon)
    assert result.value == 50.0
    assert (result.count, result.excluded) == (2, 1)
    with pytest.raises(ValueError, match="no instances"):
        entail_metric([], lexicon)
    with pytest.raises(ValueError, match="all generations empty"):
        entail_metric([(0, 0, ["<eos>"], ref)], lexicon)


# ----------------------------------------------------------------------
# greedy embedding matching


def _one_hot_table():
    vocab = Vocab.from_texts([["a", "b", "c"]])
    return EmbeddingTable(vocab, np.eye(len(vocab)))


def test_embedding_table_cosine():
    table = _one_hot_table()
    assert table.cosine("a", "a") == 1.0
    assert table.cosine("a", "b") == 0.0
    assert table.cosine("a", "b") == table.cosine("b", "a")
    assert len(table._cache) == 2  # the ordered pair is cached once
    vocab = table.vocab
    vectors = np.eye(len(vocab))
    vectors[vocab.token_to_id("c")] = 0.0
    zeroed = EmbeddingTable(vocab, vectors)
    assert zeroed.cosine("c", "a") == 0.0
    assert zeroed.cosine("c", "c") == 0.0
    with pytest.raises(ValueError, match="cover the vocabulary"):
        EmbeddingTable(vocab, np.eye(len(vocab) - 1))


def test_greedy_match_f1_hand_case():
    table = _one_hot_table()
    assert greedy_match_f1(["a", "b"], ["a", "c"], table) == (0.5, 0.5, 0.5)
    assert greedy_match_f1(["a"], ["a"], table) == (1.0, 1.0, 1.0)
    assert greedy_match_f1(["b"], ["c"], table) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="empty"):
        greedy_match_f1([], ["a"], table)
    with pytest.raises(ValueError, match="empty"):
        greedy_match_f1(["a"], [], table)


def test_gm_f1_metric_aggregates():
    table = _one_hot_table()
    instances = [
        (0, 0, ["a", "b"], ["a", "c"]),
        (0, 1, ["a"], ["a"]),
        (1, 1, ["<eos>"], ["a"]),
    ]
    writer = AuditWriter()
    result = gm_f1_metric(instances, table, audit=writer)
    assert result.value == (0.5 + 1.0) / 2
    assert (result.count, result.excluded) == (2, 1)
    assert writer.rows[0] == {"instance": "0:0", "precision": 0.5,
                              "recall": 0.5, "f1": 0.5}


def test_cooccurrence_embeddings(small_corpus):
    table = train_cooccurrence_embeddings(small_corpus, dim=16)
    assert table.cosine("food", "food") == pytest.approx(1.0)
    # unseen tokens share the constant unknown-word vector
    assert table.vocab.token_to_id("zzzz") == UNK_ID
    assert table.cosine("zzzz", "qqqq") == pytest.approx(1.0)
    assert np.linalg.norm(table.vector("food")) > 0.0
    with pytest.raises(ValueError, match="window"):
        train_cooccurrence_embeddings(small_corpus, window=0)
    bare = SimpleNamespace(vocab=small_corpus.vocab, train=[])
    with pytest.raises(ValueError, match="no co-occurrences"):
        train_cooccurrence_embeddings(bare)


# ----------------------------------------------------------------------
# reference-conditioned bigram NLL


def _toy_lm(alpha=0.5):
    vocab = Vocab.from_texts([["a", "b"]])
    train = [SimpleNamespace(tokens=("a", "b", "a"))]
    return BigramLM.fit(SimpleNamespace(vocab=vocab, train=train), alpha=alpha)


def test_bigram_lm_hand_counts():
    lm = _toy_lm(alpha=0.5)
    V = lm.vocab_size
    a = lm.vocab.token_to_id("a")
    b = lm.vocab.token_to_id("b")
    assert lm.unigram_prob(a) == (2 + 0.5) / (3 + 0.5 * V)
    assert lm.unigram_prob(b) == (1 + 0.5) / (3 + 0.5 * V)
    assert lm.bigram_prob(a, b) == (1 + 0.5) / (1 + 0.5 * V)
    assert lm.bigram_prob(b, b) == 0.5 / (1 + 0.5 * V)
    expected = -(math.log(lm.unigram_prob(a)) + math.log(lm.bigram_prob(a, b))) / 2
    assert lm.nll(["a", "b"]) == pytest.approx(expected, rel=1e-15)
    with pytest.raises(ValueError, match="alpha"):
        _toy_lm(alpha=0.0)
    with pytest.raises(ValueError, match="empty"):
        lm.nll([])


def test_cond_nll_interpolates_with_the_reference():
    lm = _toy_lm()
    # full overlap: the reference transition a->b gets probability one
    hand = -(math.log(lm.unigram_prob(lm.vocab.token_to_id("a")))
             + math.log(0.5 * 1.0 + 0.5 * lm.bigram_prob(
                 lm.vocab.token_to_id("a"), lm.vocab.token_to_id("b")))) / 2
    assert cond_nll_score(["a", "b"], ["a", "b"], lm) == pytest.approx(hand, rel=1e-15)
    # no shared context token: identical to the corpus model, bitwise
    assert cond_nll_score(["a", "a"], ["b", "b"], lm) == lm.nll(["a", "a"])
    assert cond_nll_score(["a", "b"], ["a", "b"], lm, weight=0.0) == lm.nll(["a", "b"])
    with pytest.raises(ValueError, match="weight"):
        cond_nll_score(["a"], ["a"], lm, weight=1.5)
    with pytest.raises(ValueError, match="generated"):
        cond_nll_score([], ["a"], lm)
    with pytest.raises(ValueError, match="reference"):
        cond_nll_score(["a"], [], lm)


def test_cnll_metric_aggregates():
    lm = _toy_lm()
    instances = [
        (0, 0, ["a", "b"], ["a", "b"]),
        (0, 1, ["<eos>"], ["a"]),
        (1, 0, ["b", "a"], ["a", "b"]),
    ]
    result = cnll_metric(instances, lm, weight=0.25)
    expected = (cond_nll_score(["a", "b"], ["a", "b"], lm, 0.25)
                + cond_nll_score(["b", "a"], ["a", "b"], lm, 0.25)) / 2
    assert result.value == expected
    assert (result.count, result.excluded) == (2, 1)
    assert result.direction == LOWER
    assert result.config == {"weight": 0.25}


# ----------------------------------------------------------------------
# rating error


def test_rmse_hand_values():
    assert rmse([1.0, 3.0], [2.0, 5.0]) == math.sqrt((1.0 + 4.0) / 2)
    assert rmse([2.5], [2.5]) == 0.0
    with pytest.raises(ValueError, match="length mismatch"):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="empty"):
        rmse([], [])


def test_rmse_metric_clamps_predictions():
    writer = AuditWriter()
    result = rmse_metric([(0, 0, 7.2, 5.0), (0, 1, 0.0, 2.0)], audit=writer)
    assert result.value == rmse([5.0, 1.0], [5.0, 2.0])
    assert result.count == 2
    assert writer.rows[0]["predicted"] == 5.0
    assert writer.rows[1]["squared_error"] == 1.0
    with pytest.raises(ValueError, match="no instances"):
        rmse_metric([])
