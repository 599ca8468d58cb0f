"""Embedding providers: widths, UNK policies, gradient flow, char LMs."""

import numpy as np
import pytest

from taglab import autodiff as ad
from taglab.autodiff import Tensor
from taglab.embeddings import (
    CharLm,
    CharLmConfig,
    CharLmProvider,
    EmbeddingStack,
    ExternalProvider,
    LookupProvider,
    SubwordProvider,
    char_lm_loss,
    embed_sentence,
    extract_word_states,
    load_vector_file,
    train_char_lm,
)
from taglab.errors import ShapeError, VocabError
from taglab.subword import learn_bpe

from test_autodiff import numeric_grad, rel_error


def lookup(dim=4, seed=0, words=("sun", "moon", "star")):
    return LookupProvider.build(list(words), dim, np.random.default_rng(seed))


class TestLookup:
    def test_known_word_row(self):
        p = lookup()
        out = p.embed(["sun"]).data
        assert out.shape == (1, 4)
        assert np.array_equal(out[0], p.table.data[p._ids["sun"]])

    def test_oov_shares_unk_row(self):
        p = lookup()
        out = p.embed(["qqq", "zzz", "sun"]).data
        assert np.array_equal(out[0], out[1])
        assert np.array_equal(out[0], p.table.data[0])

    def test_gradient_flows_to_used_rows(self):
        p = lookup()
        out = p.embed(["sun", "sun", "qqq"])
        ad.reduce_sum(ad.mul(out, out)).backward()
        grad = p.table.grad
        assert grad is not None
        assert np.any(grad[p._ids["sun"]] != 0)
        assert np.any(grad[0] != 0)
        assert np.all(grad[p._ids["moon"]] == 0)

    def test_gradient_matches_finite_differences(self):
        p = lookup(dim=3, seed=2)
        sentence = ["sun", "qqq", "sun"]

        def value(table):
            t = Tensor(table)
            prov = LookupProvider(p.tokens, ad.Parameter(table, "t"))
            out = prov.embed(sentence)
            return ad.reduce_sum(ad.mul(out, out)).item()

        out = p.embed(sentence)
        ad.reduce_sum(ad.mul(out, out)).backward()
        numeric = numeric_grad(value, p.table.data.copy())
        assert rel_error(p.table.grad, numeric) < 1e-4


class TestSubwordProvider:
    @pytest.fixture
    def provider(self):
        vocab = learn_bpe(["low", "low", "lower", "st"], max_vocab=9)
        return SubwordProvider.build(vocab, 4, np.random.default_rng(1))

    def test_mean_of_two_pieces(self):
        vocab = learn_bpe(["ab", "ab", "cd", "cd"], max_vocab=6)
        p = SubwordProvider.build(vocab, 2, np.random.default_rng(0))
        p.table.data[p._ids["ab"]] = [1.0, 2.0]
        p.table.data[p._ids["cd"]] = [3.0, 4.0]
        out = p.embed(["abcd"]).data
        assert np.allclose(out[0], [2.0, 3.0])

    def test_width(self, provider):
        assert provider.embed(["lowest", "low"]).shape == (2, 4)

    def test_unknown_char_uses_unk_piece_row(self, provider):
        from taglab.subword import UNK_PIECE

        out = provider.embed(["€"]).data  # char outside training alphabet
        assert np.allclose(out[0], provider.table.data[provider._ids[UNK_PIECE]])

    def test_gradient_matches_finite_differences(self, provider):
        sentence = ["lowest", "low"]
        out = provider.embed(sentence)
        ad.reduce_sum(ad.mul(out, out)).backward()

        def value(table):
            prov = SubwordProvider(provider.vocab, ad.Parameter(table, "t"))
            o = prov.embed(sentence)
            return ad.reduce_sum(ad.mul(o, o)).item()

        numeric = numeric_grad(value, provider.table.data.copy())
        assert rel_error(provider.table.grad, numeric) < 1e-4


class TestExternal:
    GOOD = "2 3\nsun 1.0 2.0 3.0\nmoon 4.0 5.0 6.0\n"

    def test_load(self):
        p = load_vector_file(self.GOOD)
        assert p.dim == 3
        assert len(p.tokens) == 2
        assert np.allclose(p.embed(["sun"]).data[0], [1, 2, 3])

    def test_unk_fallback_is_mean(self):
        p = load_vector_file(self.GOOD)
        assert np.allclose(p.embed(["other"]).data[0], [2.5, 3.5, 4.5])

    def test_row_arity_error_names_line(self):
        with pytest.raises(VocabError, match="line 3"):
            load_vector_file("2 3\nsun 1.0 2.0 3.0\nmoon 4.0 5.0\n")

    def test_non_numeric_field(self):
        with pytest.raises(VocabError, match="line 2"):
            load_vector_file("1 2\nsun one 2.0\n")

    def test_bad_header(self):
        with pytest.raises(VocabError):
            load_vector_file("banana\nsun 1.0\n")

    def test_count_mismatch(self):
        with pytest.raises(VocabError):
            load_vector_file("3 3\nsun 1.0 2.0 3.0\n")

    def test_duplicate_last_wins(self):
        text = "2 2\nsun 1.0 1.0\nsun 9.0 9.0\n"
        p = load_vector_file(text)
        assert p.duplicates == 1
        assert np.allclose(p.embed(["sun"]).data[0], [9.0, 9.0])

    def test_frozen_and_deterministic(self):
        p = load_vector_file(self.GOOD)
        a = p.embed(["sun", "x"]).data
        b = p.embed(["sun", "x"]).data
        assert np.array_equal(a, b)
        assert not p.embed(["sun"]).requires_grad


class TestStack:
    def test_concatenated_width(self):
        a = lookup(dim=4, seed=0)
        b = lookup(dim=3, seed=1)
        stack = EmbeddingStack([a, b])
        assert stack.dim == 7
        out = embed_sentence(stack, ["sun", "moon"])
        assert out.shape == (2, 7)

    def test_provider_order_respected(self):
        a = lookup(dim=2, seed=0)
        b = lookup(dim=3, seed=1)
        out = embed_sentence(EmbeddingStack([a, b]), ["sun"]).data
        assert np.array_equal(out[0, :2], a.embed(["sun"]).data[0])
        assert np.array_equal(out[0, 2:], b.embed(["sun"]).data[0])

    def test_empty_sentence_rejected(self):
        with pytest.raises(ShapeError):
            embed_sentence(EmbeddingStack([lookup()]), [])

    def test_empty_stack_rejected(self):
        with pytest.raises(ShapeError):
            EmbeddingStack([])


class TestCharLm:
    def test_untrained_loss_near_uniform_entropy(self):
        corpus = [["abc", "cab"], ["bca"]]
        config = CharLmConfig(hidden_dim=8, char_dim=4, epochs=0, seed=0)
        streams = ["abc cab", "bca"]
        chars = sorted({c for s in streams for c in s})  # a b c space
        lm = CharLm.init("forward", chars, 4, 8, np.random.default_rng(0))
        lm.emb.data *= 0.01
        lm.w_in.data *= 0.01
        lm.w_rec.data *= 0.01
        lm.out_w.data *= 0.01
        loss = char_lm_loss(lm, corpus)
        alphabet = len(chars) + 1  # includes the unseen-char id
        assert abs(loss - np.log(alphabet)) / np.log(alphabet) < 0.10

    def test_deterministic_pattern_trains_to_near_zero(self):
        corpus = [["ababababababababab"]] * 4
        config = CharLmConfig(hidden_dim=12, char_dim=6, epochs=60,
                              learning_rate=0.05, chunk_len=16, seed=1)
        lm = train_char_lm(corpus, config)
        assert char_lm_loss(lm, corpus) < 0.05

    def test_backward_direction_trains_on_reversed_stream(self):
        corpus = [["xyxyxyxyxyxy"]] * 4
        config = CharLmConfig(direction="backward", hidden_dim=10, char_dim=5,
                              epochs=60, learning_rate=0.05, chunk_len=12, seed=2)
        lm = train_char_lm(corpus, config)
        assert lm.direction == "backward"
        assert char_lm_loss(lm, corpus) < 0.05

    def test_empty_corpus_rejected(self):
        from taglab.errors import TrainingError

        with pytest.raises(TrainingError):
            train_char_lm([], CharLmConfig(epochs=1))

    def test_epoch_losses_reported(self):
        corpus = [["abab abab"]] * 2
        config = CharLmConfig(hidden_dim=6, char_dim=4, epochs=3,
                              learning_rate=0.02, seed=3)
        lm = train_char_lm(corpus, config)
        assert len(lm.epoch_losses) == 3


def small_pair(seed=0, hidden=5):
    corpus = [["mono", "rail"], ["rail", "road"]]
    fwd = train_char_lm(corpus, CharLmConfig("forward", hidden, 4, 2, 0.02, 32, seed))
    bwd = train_char_lm(corpus, CharLmConfig("backward", hidden, 4, 2, 0.02, 32, seed))
    return fwd, bwd


class TestWordStates:
    def test_output_width_is_twice_hidden(self):
        fwd, bwd = small_pair()
        out = extract_word_states((fwd, bwd), ["mono", "rail"])
        assert out.shape == (2, 10)

    def test_single_char_token(self):
        fwd, bwd = small_pair()
        out = extract_word_states((fwd, bwd), ["a"])
        assert out.shape == (1, 10)
        fwd_states = fwd.hidden_states(fwd.char_ids("a"))
        assert np.allclose(out[0, :5], fwd_states[0])

    def test_frozen_determinism(self):
        fwd, bwd = small_pair()
        sentence = ["rail", "road"]
        a = extract_word_states((fwd, bwd), sentence)
        b = extract_word_states((fwd, bwd), sentence)
        assert np.array_equal(a, b)

    def test_context_changes_vectors(self):
        fwd, bwd = small_pair()
        in_ctx_a = extract_word_states((fwd, bwd), ["mono", "rail"])[1]
        in_ctx_b = extract_word_states((fwd, bwd), ["road", "rail"])[1]
        # same surface, different contexts: equality is not required and
        # (with a trained forward LM) essentially never happens
        assert not np.allclose(in_ctx_a, in_ctx_b)

    def test_forward_vector_is_state_after_last_char(self):
        fwd, bwd = small_pair(seed=4)
        sentence = ["ab", "cd"]
        stream = "ab cd"
        states = fwd.hidden_states(fwd.char_ids(stream))
        out = extract_word_states((fwd, bwd), sentence)
        assert np.allclose(out[0, :5], states[1])   # after 'b'
        assert np.allclose(out[1, :5], states[4])   # after 'd'

    def test_backward_vector_is_state_after_first_char_reversed(self):
        fwd, bwd = small_pair(seed=5)
        sentence = ["ab", "cd"]
        stream = "ab cd"
        rev_states = bwd.hidden_states(bwd.char_ids(stream[::-1]))
        out = extract_word_states((fwd, bwd), sentence)
        n = len(stream)
        assert np.allclose(out[0, 5:], rev_states[n - 1 - 0])  # 'a' at pos 0
        assert np.allclose(out[1, 5:], rev_states[n - 1 - 3])  # 'c' at pos 3

    def test_hidden_dim_mismatch(self):
        fwd, _ = small_pair(hidden=5)
        _, bwd = small_pair(hidden=6)
        with pytest.raises(ShapeError):
            extract_word_states((fwd, bwd), ["a"])

    def test_provider_embeds_frozen(self):
        fwd, bwd = small_pair()
        provider = CharLmProvider(fwd, bwd)
        out = provider.embed(["mono"])
        assert out.shape == (1, 10)
        assert not out.requires_grad
        assert provider.parameters() == []
