"""Adversarial rewrites that the ranking metrics score against.

Two rewrite families: sentiment negation (opinion terms swapped with
their antonyms, with a negator-dropping rule) and aspect substitution
(every aspect term replaced by a target aspect). Both are pure
functions of the tokens and the lexicon; candidate sampling is a pure
function of its seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lexicon import Lexicon

NEGATION = "sentiment-negation"
SUBSTITUTION = "aspect-substitution"


@dataclass(frozen=True)
class PerturbedPair:
    original: tuple[str, ...]
    perturbed: tuple[str, ...]
    kind: str
    touched: tuple[int, ...]  # positions in `original` that were edited


def negate_sentiment(tokens, lexicon: Lexicon) -> PerturbedPair | None:
    """Flip the sentiment class of a lexicon-covered text.

    Every opinion term is replaced by its antonym, except that an
    opinion immediately preceded by the negator keeps its surface form
    and loses the negator ("not great" -> "great"). Texts with no
    opinion term are unperturbable (None). Applying the rewrite twice
    returns to the original polarity class, though not necessarily to
    the original tokens.
    """
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot perturb empty text")
    out: list[str] = []
    touched: list[int] = []
    for idx, tok in enumerate(tokens):
        if lexicon.is_opinion(tok):
            if out and out[-1] == lexicon.negator:
                out.pop()
                out.append(tok)
                touched.append(idx - 1)
            else:
                out.append(lexicon.antonym(tok))
                touched.append(idx)
        else:
            out.append(tok)
    if not touched:
        return None
    return PerturbedPair(tuple(tokens), tuple(out), NEGATION, tuple(touched))


def substitute_aspect(tokens, target_aspect: str, lexicon: Lexicon) -> PerturbedPair | None:
    """Replace every aspect term with the target aspect.

    Unperturbable (None) when the text mentions no aspect at all. A
    text already about the target aspect is a fixed point: returned
    with zero touched positions.
    """
    if not lexicon.is_aspect(target_aspect):
        raise ValueError(f"'{target_aspect}' is not in the aspect lexicon")
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot perturb empty text")
    out: list[str] = []
    touched: list[int] = []
    found = False
    for idx, tok in enumerate(tokens):
        if lexicon.is_aspect(tok):
            found = True
            if tok != target_aspect:
                touched.append(idx)
            out.append(target_aspect)
        else:
            out.append(tok)
    if not found:
        return None
    return PerturbedPair(tuple(tokens), tuple(out), SUBSTITUTION, tuple(touched))


def sample_distinct(rng: np.random.Generator, n: int, k: int, excluded) -> list[int]:
    """k distinct indices from range(n) skipping `excluded`, by rejection.

    The caller must guarantee more than k eligible indices; expected
    work is O(k) when the eligible set dominates the range.
    """
    chosen: list[int] = []
    seen: set[int] = set()
    while len(chosen) < k:
        j = int(rng.integers(n))
        if j in seen or excluded(j):
            continue
        seen.add(j)
        chosen.append(j)
    return chosen


def sample_candidates(reviews, gold, k: int, seed) -> list:
    """k distinct reviews, excluding any whose text equals the gold text.

    Seeded-deterministic; exactly k eligible reviews short-circuits to
    all of them in corpus order; fewer than k is an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    gold_text = gold.text
    eligible = [r for r in reviews if r.text != gold_text]
    if len(eligible) < k:
        raise ValueError(f"not enough distinct candidates: {len(eligible)} < k={k}")
    if len(eligible) == k:
        return eligible
    rng = np.random.default_rng([seed, 0xCA9D] if isinstance(seed, int) else list(seed) + [0xCA9D])
    idx = sorted(sample_distinct(rng, len(eligible), k, lambda _: False))
    return [eligible[j] for j in idx]
