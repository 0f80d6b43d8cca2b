import math
import random

import numpy as np
import pytest

from motioncap.metrics import (
    DegenerateCorpusError,
    EvalPair,
    MetricError,
    bleu,
    cider,
    evaluate,
    rouge_l,
)
from oracles import bleu_oracle, cider_oracle, rouge_l_oracle

WORDS = ["the", "cat", "sat", "dog", "ran", "on", "mat", "fast", "red", "big",
         "small", "jumps"]


def random_corpus(rng, n_pairs=None, max_len=9):
    n = n_pairs or rng.randint(2, 6)
    pairs = []
    for _ in range(n):
        cand = " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, max_len)))
        refs = [
            " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, max_len)))
            for _ in range(rng.randint(1, 3))
        ]
        pairs.append((cand, refs))
    return pairs


def as_eval_pairs(pairs):
    return [EvalPair(c, list(r)) for c, r in pairs]


# -- hand-derived fixtures ----------------------------------------------------


def test_bleu1_brevity_penalty_fixture():
    pairs = [EvalPair("the cat sat", ["the cat sat on the mat"])]
    assert bleu(pairs, 1) == pytest.approx(100 * math.exp(-1.0), abs=0.01)
    assert bleu(pairs, 1) == pytest.approx(36.79, abs=0.01)


def test_rouge_l_fixture():
    pairs = [EvalPair("the cat sat", ["the cat sat on the mat"])]
    assert rouge_l(pairs) == pytest.approx(62.89, abs=0.01)


def test_perfect_match_is_100():
    pairs = [
        EvalPair("a person walks forward", ["a person walks forward"]),
        EvalPair("the dog runs fast today", ["the dog runs fast today"]),
    ]
    assert bleu(pairs, 1) == 100.0
    assert bleu(pairs, 4) == 100.0
    assert rouge_l(pairs) == 100.0
    assert cider(pairs) == pytest.approx(100.0, abs=0.5)


def test_disjoint_strings_score_zero():
    pairs = [
        EvalPair("alpha beta gamma delta", ["one two three four"]),
        EvalPair("epsilon zeta eta theta", ["five six seven eight"]),
    ]
    assert bleu(pairs, 4) == pytest.approx(0.0, abs=1e-4)
    assert rouge_l(pairs) == 0.0
    assert cider(pairs) == pytest.approx(0.0, abs=1e-6)


def test_all_empty_candidates_warn_and_zero():
    pairs = [EvalPair("", ["a b"]), EvalPair("", ["c d"])]
    with pytest.warns(UserWarning, match="empty"):
        assert bleu(pairs, 1) == 0.0


def test_cider_rejects_single_document():
    with pytest.raises(DegenerateCorpusError):
        cider([EvalPair("a b c d", ["a b c d"])])


def test_cider_tf_sensitivity():
    base = [
        EvalPair("a b", ["a b"]),
        EvalPair("c d", ["c d e"]),
    ]
    doubled = [
        EvalPair("a a b b", ["a b"]),
        EvalPair("c d", ["c d e"]),
    ]
    assert cider(base) != cider(doubled)


# -- oracle equivalence -------------------------------------------------------


def test_metrics_match_oracles_on_random_corpora():
    rng = random.Random(1234)
    for _ in range(50):
        pairs = random_corpus(rng, max_len=8)
        eval_pairs = as_eval_pairs(pairs)
        assert bleu(eval_pairs, 1) == pytest.approx(bleu_oracle(pairs, 1), abs=1e-9)
        assert bleu(eval_pairs, 4) == pytest.approx(bleu_oracle(pairs, 4), abs=1e-9)
        assert rouge_l(eval_pairs) == pytest.approx(rouge_l_oracle(pairs), abs=1e-9)
        assert cider(eval_pairs) == pytest.approx(cider_oracle(pairs), abs=1e-9)


# -- invariants ---------------------------------------------------------------


def test_permutation_invariance():
    rng = random.Random(7)
    pairs = as_eval_pairs(random_corpus(rng, n_pairs=5))
    shuffled = list(pairs)
    random.Random(3).shuffle(shuffled)
    assert bleu(pairs, 4) == bleu(shuffled, 4)
    assert rouge_l(pairs) == rouge_l(shuffled)
    assert cider(pairs) == cider(shuffled)


def test_bounds():
    rng = random.Random(11)
    for _ in range(20):
        pairs = as_eval_pairs(random_corpus(rng))
        for n in (1, 4):
            assert 0.0 <= bleu(pairs, n) <= 100.0
        assert 0.0 <= rouge_l(pairs) <= 100.0
        assert cider(pairs) >= 0.0


def test_extra_reference_never_hurts():
    rng = random.Random(13)
    for _ in range(20):
        pairs = as_eval_pairs(random_corpus(rng))
        extended = [
            EvalPair(p.candidate, p.references + ["zz yy xx ww"]) for p in pairs
        ]
        assert rouge_l(extended) >= rouge_l(pairs) - 1e-12
        assert bleu(extended, 1) >= bleu(pairs, 1) - 1e-12


def test_candidate_equal_to_any_reference_is_100():
    pairs = [
        EvalPair("b a c", ["x y z", "b a c"]),
        EvalPair("d e", ["d e", "q r s"]),
    ]
    assert bleu(pairs, 1) == 100.0
    assert rouge_l(pairs) == 100.0


# -- evaluate -----------------------------------------------------------------


def test_evaluate_lemmatized_protocol():
    pairs = [
        EvalPair("runs", ["run"]),
        EvalPair("walks", ["walk"]),
    ]
    plain = evaluate(pairs, lemmatized=False)
    lemm = evaluate(pairs, lemmatized=True)
    assert plain.bleu1 == pytest.approx(0.0, abs=1e-4)
    assert lemm.bleu1 == 100.0
    assert lemm.lemmatized and not plain.lemmatized


def test_evaluate_reports_pair_count():
    pairs = as_eval_pairs(random_corpus(random.Random(5), n_pairs=4))
    assert evaluate(pairs).n_pairs == 4


def test_empty_pairs_rejected():
    with pytest.raises(MetricError):
        evaluate([])
    with pytest.raises(MetricError):
        EvalPair("x", [])
