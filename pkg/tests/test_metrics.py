"""Sentence metric correctness against independent oracles and hand values."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqrl.metrics import (
    ALL_REWARD,
    MetricConfig,
    RewardSpec,
    composite_reward,
    corpus_bleu,
    corpus_ter,
    sentence_bleu,
    sentence_chrf,
    sentence_gleu,
    sentence_ter,
    ter_alignment,
    token_f1,
)
from oracles import (
    bleu_oracle,
    chrf_oracle,
    corpus_bleu_oracle,
    edit_distance_oracle,
    f1_oracle,
    gleu_oracle,
    ter_oracle,
)


def _random_pair(rng, vocab=20, lo=1, hi=15):
    hyp = [int(t) for t in rng.integers(0, vocab, size=rng.integers(lo, hi + 1))]
    ref = [int(t) for t in rng.integers(0, vocab, size=rng.integers(max(lo, 1), hi + 1))]
    return hyp, ref


class TestSentenceBleu:
    def test_identity_scores_100(self):
        assert sentence_bleu([1, 2, 3, 4, 5], [1, 2, 3, 4, 5]) == 100.0

    def test_brevity_penalty_hand_value(self):
        """Four-token prefix of a five-token reference: all precisions 1,
        so only the brevity penalty exp(1 - 5/4) remains."""
        got = sentence_bleu("a b c d".split(), "a b c d e".split())
        np.testing.assert_allclose(got, 100.0 * math.exp(1.0 - 5.0 / 4.0), rtol=1e-12)
        np.testing.assert_allclose(got, 77.880, atol=5e-4)

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(101)
        for _ in range(400):
            hyp, ref = _random_pair(rng)
            np.testing.assert_allclose(
                sentence_bleu(hyp, ref), bleu_oracle(hyp, ref), atol=1e-9
            )

    def test_empty_hypothesis_scores_zero(self):
        assert sentence_bleu([], [1, 2]) == 0.0

    def test_empty_reference_raises(self):
        with pytest.raises(ValueError):
            sentence_bleu([1], [])

    def test_longer_hypothesis_gets_no_brevity_penalty(self):
        short = sentence_bleu([1, 2], [1, 2, 3, 4])
        exact = sentence_bleu([1, 2, 3, 4], [1, 2, 3, 4])
        assert short < exact

    @given(st.lists(st.integers(0, 8), min_size=4, max_size=12))
    @settings(max_examples=200, deadline=None)
    def test_perfect_score_only_on_identity(self, ref):
        """100 is attained exactly when the sequences coincide (|ref| >= 4)."""
        assert sentence_bleu(ref, ref) == 100.0
        mutated = list(ref)
        mutated[0] = mutated[0] + 1
        assert sentence_bleu(mutated, ref) < 100.0

    @given(
        st.lists(st.integers(0, 9), min_size=1, max_size=10),
        st.lists(st.integers(0, 9), min_size=1, max_size=10),
        st.permutations(list(range(10))),
    )
    @settings(max_examples=150, deadline=None)
    def test_relabeling_invariance(self, hyp, ref, perm):
        """A bijective token relabeling leaves the score unchanged."""
        relabeled = sentence_bleu([perm[t] for t in hyp], [perm[t] for t in ref])
        np.testing.assert_allclose(relabeled, sentence_bleu(hyp, ref), atol=1e-9)


class TestSentenceGleu:
    def test_identity_scores_100(self):
        assert sentence_gleu([3, 1, 4], [3, 1, 4]) == 100.0

    def test_pooled_min_precision_recall_hand_value(self):
        """hyp "a b" vs ref "a b c": matches a, b, "a b" = 3; hyp pool 3,
        ref pool 5, so min(3/3, 3/5) = 60."""
        np.testing.assert_allclose(
            sentence_gleu("a b".split(), "a b c".split()), 60.0, rtol=1e-12
        )

    def test_disjoint_vocab_scores_zero(self):
        assert sentence_gleu([1, 2], [3, 4]) == 0.0

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(102)
        for _ in range(400):
            hyp, ref = _random_pair(rng)
            np.testing.assert_allclose(
                sentence_gleu(hyp, ref), gleu_oracle(hyp, ref), atol=1e-9
            )

    def test_empty_hypothesis_scores_zero(self):
        assert sentence_gleu([], [1]) == 0.0

    @given(
        st.lists(st.integers(0, 6), min_size=1, max_size=9),
        st.lists(st.integers(0, 6), min_size=1, max_size=9),
    )
    @settings(max_examples=200, deadline=None)
    def test_bounded(self, hyp, ref):
        assert 0.0 <= sentence_gleu(hyp, ref) <= 100.0


class TestSentenceChrf:
    def test_identity_scores_100(self):
        assert sentence_chrf("abcdef", "abcdef") == 100.0

    def test_disjoint_characters_score_zero(self):
        assert sentence_chrf("aaa", "bbb") == 0.0

    def test_whitespace_is_stripped(self):
        np.testing.assert_allclose(
            sentence_chrf("a b c", "ab c"), sentence_chrf("abc", "abc"), atol=1e-12
        )

    def test_matches_oracle_on_random_strings(self):
        rng = np.random.default_rng(103)
        letters = "abcdefgh"
        for _ in range(400):
            hyp = "".join(rng.choice(list(letters), size=rng.integers(0, 15)))
            ref = "".join(rng.choice(list(letters), size=rng.integers(1, 15)))
            np.testing.assert_allclose(
                sentence_chrf(hyp, ref), chrf_oracle(hyp, ref), atol=1e-9
            )

    def test_empty_reference_raises(self):
        with pytest.raises(ValueError):
            sentence_chrf("a", "   ")


class TestSentenceTer:
    def test_identity_scores_zero(self):
        assert sentence_ter([1, 2, 3], [1, 2, 3]) == 0.0

    def test_single_deletion_hand_value(self):
        np.testing.assert_allclose(
            sentence_ter("a b c".split(), "a c".split()), 0.5, rtol=1e-12
        )

    def test_single_block_shift_hand_value(self):
        assert ter_alignment("c d a b".split(), "a b c d".split()) == (1, 0)
        np.testing.assert_allclose(
            sentence_ter("c d a b".split(), "a b c d".split()), 0.25, rtol=1e-12
        )

    def test_matches_exhaustive_oracle_on_short_pairs(self):
        """Exact shifts and edits against brute-force search, <= 6 tokens."""
        rng = np.random.default_rng(104)
        for _ in range(600):
            hyp = [int(t) for t in rng.integers(0, 6, size=rng.integers(0, 7))]
            ref = [int(t) for t in rng.integers(0, 6, size=rng.integers(1, 7))]
            assert ter_alignment(hyp, ref) == ter_oracle(hyp, ref)

    def test_shift_search_never_hurts(self):
        """shifts + edits never exceeds the no-shift edit distance."""
        rng = np.random.default_rng(105)
        for _ in range(300):
            hyp, ref = _random_pair(rng, vocab=8, lo=1, hi=12)
            shifts, edits = ter_alignment(hyp, ref)
            assert shifts + edits <= edit_distance_oracle(hyp, ref)

    def test_exact_search_never_worse_than_greedy(self):
        rng = np.random.default_rng(106)
        greedy_only = MetricConfig(ter_exact_len=0)
        for _ in range(300):
            hyp = [int(t) for t in rng.integers(0, 5, size=rng.integers(0, 9))]
            ref = [int(t) for t in rng.integers(0, 5, size=rng.integers(1, 9))]
            assert sum(ter_alignment(hyp, ref)) <= sum(ter_alignment(hyp, ref, greedy_only))

    def test_state_cap_falls_back_to_greedy(self):
        cramped = MetricConfig(ter_exact_len=8, ter_state_cap=1)
        greedy_only = MetricConfig(ter_exact_len=0)
        hyp, ref = "c d a b".split(), "a b c d".split()
        assert ter_alignment(hyp, ref, cramped) == ter_alignment(hyp, ref, greedy_only)

    def test_string_tokens_match_relabeled_ints(self):
        """Token identity is all that matters, not token type."""
        hyp_s, ref_s = "x y z y".split(), "y x z".split()
        hyp_i, ref_i = [0, 1, 2, 1], [1, 0, 2]
        assert ter_alignment(hyp_s, ref_s) == ter_alignment(hyp_i, ref_i)

    @given(st.lists(st.integers(0, 4), min_size=1, max_size=7))
    @settings(max_examples=150, deadline=None)
    def test_zero_iff_identical(self, ref):
        assert sentence_ter(ref, ref) == 0.0
        rotated = ref[1:] + ref[:1]
        if rotated != ref:
            assert sentence_ter(rotated, ref) > 0.0

    def test_empty_reference_raises(self):
        with pytest.raises(ValueError):
            sentence_ter([1], [])


class TestTokenF1:
    def test_identity_scores_100(self):
        assert token_f1([1, 2, 3], [1, 2, 3]) == 100.0

    def test_half_overlap_hand_value(self):
        np.testing.assert_allclose(token_f1("a b".split(), "a c".split()), 50.0, rtol=1e-12)

    def test_multiset_semantics_hand_value(self):
        """hyp "a a" vs ref "a": overlap 1, P = 1/2, R = 1, F1 = 2/3."""
        np.testing.assert_allclose(token_f1("a a".split(), "a".split()), 200.0 / 3.0, rtol=1e-12)

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(107)
        for _ in range(400):
            hyp, ref = _random_pair(rng)
            np.testing.assert_allclose(token_f1(hyp, ref), f1_oracle(hyp, ref), atol=1e-9)

    def test_empty_hypothesis_scores_zero(self):
        assert token_f1([], [1, 2]) == 0.0

    @given(
        st.lists(st.integers(0, 5), min_size=1, max_size=8),
        st.permutations(list(range(6))),
    )
    @settings(max_examples=150, deadline=None)
    def test_order_and_relabeling_invariance(self, ref, perm):
        """F1 sees token multisets only."""
        shuffled = list(reversed(ref))
        np.testing.assert_allclose(token_f1(shuffled, ref), 100.0, atol=1e-9)
        relabeled = token_f1([perm[t] for t in ref], [perm[t] for t in ref])
        np.testing.assert_allclose(relabeled, 100.0, atol=1e-9)


class TestCompositeReward:
    def test_single_component_equals_metric(self):
        hyp, ref = [1, 2, 4, 3], [1, 2, 3, 4]
        spec = RewardSpec.single("bleu")
        np.testing.assert_allclose(
            composite_reward(hyp, ref, spec), sentence_bleu(hyp, ref), rtol=1e-12
        )

    def test_identity_under_all_preset(self):
        """Four metrics at 100 plus a negated zero TER, averaged: 80."""
        class Seq:
            tokens = (1, 2, 3, 4)
            surface = "a b c d"

        np.testing.assert_allclose(composite_reward(Seq(), Seq(), ALL_REWARD), 80.0, rtol=1e-12)

    def test_zero_weights_give_zero(self):
        spec = RewardSpec(components=(("bleu", 0.0), ("ter", 0.0)))
        assert composite_reward([1, 2], [1, 2], spec) == 0.0

    def test_linear_in_weights(self):
        hyp, ref = [1, 3, 2], [1, 2, 3]
        rng = np.random.default_rng(108)
        for _ in range(50):
            w1, w2, scale = rng.normal(size=3)
            base = composite_reward(
                hyp, ref, RewardSpec(components=(("bleu", w1), ("ter", w2)))
            )
            scaled = composite_reward(
                hyp, ref, RewardSpec(components=(("bleu", scale * w1), ("ter", scale * w2)))
            )
            np.testing.assert_allclose(scaled, scale * base, atol=1e-9)

    def test_ter_component_is_negated_and_rescaled(self):
        hyp, ref = "a b c".split(), "a c".split()
        got = composite_reward(hyp, ref, RewardSpec.single("ter"))
        np.testing.assert_allclose(got, -100.0 * 0.5, rtol=1e-12)

    def test_parse_formats(self):
        assert RewardSpec.parse("bleu").components == (("bleu", 1.0),)
        assert RewardSpec.parse("all") is ALL_REWARD
        spec = RewardSpec.parse("bleu:0.7, chrf:0.3")
        assert spec.components == (("bleu", 0.7), ("chrf", 0.3))

    def test_unknown_metric_rejected(self):
        with pytest.raises(ValueError, match="unknown metric"):
            RewardSpec.single("rouge")


class TestCorpusBleu:
    def test_identical_corpus_scores_100(self):
        refs = [[1, 2, 3, 4], [5, 6, 7, 8, 9]]
        assert corpus_bleu(refs, refs) == 100.0

    def test_single_pair_with_full_precisions_is_unsmoothed(self):
        """One full-precision pair: aggregation over one item changes nothing."""
        hyp, ref = [1, 2, 3, 4], [1, 2, 3, 4, 5]
        np.testing.assert_allclose(
            corpus_bleu([hyp], [ref]), 100.0 * math.exp(1.0 - 5.0 / 4.0), rtol=1e-12
        )

    def test_matches_oracle_on_random_corpora(self):
        rng = np.random.default_rng(109)
        for _ in range(60):
            size = int(rng.integers(1, 9))
            hyps, refs = [], []
            for _ in range(size):
                hyp, ref = _random_pair(rng, vocab=12, lo=1, hi=10)
                hyps.append(hyp)
                refs.append(ref)
            np.testing.assert_allclose(
                corpus_bleu(hyps, refs), corpus_bleu_oracle(hyps, refs), atol=1e-9
            )

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError, match="mismatch"):
            corpus_bleu([[1]], [[1], [2]])

    def test_zero_match_order_zeroes_the_corpus(self):
        # bigram matches exist nowhere, so corpus BLEU collapses to 0
        assert corpus_bleu([[1, 3, 2, 4]], [[1, 2, 3, 4]]) == 0.0


class TestCorpusTer:
    def test_identity_scores_zero(self):
        refs = [[1, 2], [3, 4, 5]]
        assert corpus_ter(refs, refs) == 0.0

    def test_pooled_ratio(self):
        """Totals pool across the corpus before dividing."""
        hyps = ["a b c".split(), "c d a b".split()]
        refs = ["a c".split(), "a b c d".split()]
        np.testing.assert_allclose(corpus_ter(hyps, refs), (1 + 1) / (2 + 4), rtol=1e-12)


class TestMetricConfig:
    def test_rejects_nonpositive_orders(self):
        with pytest.raises(ValueError):
            MetricConfig(bleu_max_order=0)
        with pytest.raises(ValueError):
            MetricConfig(chrf_order=0)

    def test_rejects_bad_ter_bounds(self):
        with pytest.raises(ValueError):
            MetricConfig(ter_max_shifts=-1)
        with pytest.raises(ValueError):
            MetricConfig(ter_state_cap=0)
