import math

import numpy as np
import pytest

from motioncap.decoder import (
    MODE_FINAL,
    MODE_LOW,
    DecoderConfig,
    SequenceOverflowError,
    TextDecoder,
)
from motioncap.nn import Adam, ParameterSet, Tensor, backward, no_grad
from motioncap.text import BOS, EOS

VOCAB = 12
D = 16


def make_decoder(seed=0, **kw):
    cfg = DecoderConfig(d_model=D, n_layers=kw.pop("n_layers", 1), n_heads=2,
                        vocab_size=VOCAB, max_seq_len=kw.pop("max_seq_len", 48))
    return TextDecoder(cfg, np.random.default_rng(seed))


def features(rows=3, seed=1):
    return Tensor(np.random.default_rng(seed).normal(size=(rows, D)))


def frame(body):
    return [BOS] + list(body) + [EOS]


def test_uniform_decoder_loss_is_length_times_log_vocab():
    dec = make_decoder()
    # zero all parameters on the logit path: uniform output distribution
    dec.tok_emb.data[:] = 0.0
    dec.out_bias.data[:] = 0.0
    target = frame([5, 6, 7])
    loss = dec.nll_loss(features(), target, MODE_LOW)
    assert loss.item() == pytest.approx(4 * math.log(VOCAB), rel=1e-12)


def test_empty_target_single_term():
    dec = make_decoder()
    dec.tok_emb.data[:] = 0.0
    dec.out_bias.data[:] = 0.0
    loss = dec.nll_loss(features(), frame([]), MODE_LOW)
    assert loss.item() == pytest.approx(math.log(VOCAB), rel=1e-12)


def test_unframed_target_rejected():
    dec = make_decoder()
    with pytest.raises(ValueError, match="BOS"):
        dec.nll_loss(features(), [5, 6], MODE_LOW)


def test_loss_matches_stepwise_oracle():
    dec = make_decoder(seed=3, n_layers=2)
    prefix = features(4, seed=4)
    target = frame([3, 9, 2, 7])
    loss = dec.nll_loss(prefix, target, MODE_FINAL)

    # oracle: one forward per position, reading only the last row's logits
    total = 0.0
    with no_grad():
        for t in range(1, len(target)):
            inputs = target[:t]
            import motioncap.nn as nn
            rows = nn.concat(
                [dec._mode_row(MODE_FINAL), prefix, nn.embedding(dec.tok_emb, inputs)],
                axis=0,
            )
            logits = dec._forward(rows, 1 + prefix.shape[0]).data[-1]
            log_z = np.log(np.exp(logits - logits.max()).sum()) + logits.max()
            total += -(logits[target[t]] - log_z)
    assert loss.item() == pytest.approx(total, abs=1e-9)


def test_per_token_sums_to_loss():
    dec = make_decoder(seed=5)
    prefix = features(2, seed=6)
    target = frame([1, 8, 4])
    per_token = dec.per_token_nll(prefix, target, MODE_LOW)
    loss = dec.nll_loss(prefix, target, MODE_LOW)
    assert per_token.data.sum() == pytest.approx(loss.item(), abs=1e-12)
    assert per_token.shape == (4,)


def test_causality_later_tokens_do_not_change_earlier_terms():
    dec = make_decoder(seed=7)
    prefix = features(2, seed=8)
    a = dec.per_token_nll(prefix, frame([3, 4, 5, 6]), MODE_LOW).data
    b = dec.per_token_nll(prefix, frame([3, 4, 9, 6]), MODE_LOW).data
    assert np.allclose(a[:2], b[:2], atol=1e-12)
    assert not np.allclose(a[2:], b[2:])


def test_per_token_perplexity_bound():
    dec = make_decoder(seed=9)
    target = frame([2, 3, 4])
    loss = dec.nll_loss(features(seed=10), target, MODE_LOW)
    per_token_prob = math.exp(-loss.item() / 4)
    assert 0.0 < per_token_prob <= 1.0


def test_single_sample_equals_batch_mean_of_itself():
    dec = make_decoder(seed=11)
    prefix = features(3, seed=12)
    target = frame([5, 6])
    alone = dec.nll_loss(prefix, target, MODE_LOW).item()
    batch = [dec.nll_loss(prefix, target, MODE_LOW) for _ in range(3)]
    mean = sum(b.item() for b in batch) / 3
    assert alone == pytest.approx(mean, abs=1e-10)


# -- generation ----------------------------------------------------------------


def test_generate_eos_first_returns_empty():
    dec = make_decoder()
    dec.tok_emb.data[:] = 0.0
    dec.out_bias.data[:] = -1.0
    dec.out_bias.data[EOS] = 5.0
    result = dec.generate(features(), max_len=10, mode=MODE_LOW)
    assert result.token_ids == []
    assert not result.truncated


def test_generate_deterministic():
    dec = make_decoder(seed=13)
    prefix = features(3, seed=14)
    a = dec.generate(prefix, max_len=8, mode=MODE_LOW)
    b = dec.generate(prefix, max_len=8, mode=MODE_LOW)
    assert a.token_ids == b.token_ids


def test_generate_tie_breaks_to_lowest_id():
    dec = make_decoder()
    dec.tok_emb.data[:] = 0.0
    dec.out_bias.data[:] = 0.0  # all logits equal -> argmax id 0 (BOS)
    result = dec.generate(features(), max_len=3, mode=MODE_LOW)
    assert result.token_ids == [0, 0, 0]
    assert result.truncated


def test_generate_truncation_flag():
    dec = make_decoder()
    dec.tok_emb.data[:] = 0.0
    dec.out_bias.data[:] = 0.0
    dec.out_bias.data[7] = 3.0  # never emits EOS
    result = dec.generate(features(), max_len=5, mode=MODE_LOW)
    assert result.token_ids == [7] * 5
    assert result.truncated


def test_overfit_single_caption_reproduces_it():
    dec = make_decoder(seed=15, n_layers=2)
    prefix = Tensor(np.random.default_rng(16).normal(size=(2, D)))
    target = frame([4, 9, 3, 9, 5])
    params = ParameterSet.merged({"dec": dec.params})
    opt = Adam(params, lr=3e-3)
    for _ in range(200):
        loss = dec.nll_loss(prefix, target, MODE_LOW)
        backward(loss, params=params)
        opt.step()
    result = dec.generate(prefix, max_len=10, mode=MODE_LOW)
    assert result.token_ids == [4, 9, 3, 9, 5]
    assert not result.truncated


# -- prefix assembly -------------------------------------------------------------


def test_prefix_with_no_retrievals_is_features():
    dec = make_decoder()
    f = features(4)
    prefix = dec.build_prefix([], f)
    assert prefix is f


def test_prefix_row_arithmetic():
    dec = make_decoder()
    f = features(4)
    prefix = dec.build_prefix([[5, 6, 7], [8, 9, 10, 11]], f)
    assert prefix.shape == (3 + 1 + 4 + 1 + 4, D)


def test_prefix_order_is_rank_order():
    dec = make_decoder()
    f = features(2)
    a = dec.build_prefix([[5, 6], [7, 8]], f)
    b = dec.build_prefix([[7, 8], [5, 6]], f)
    assert not np.allclose(a.data, b.data)


def test_prefix_overflow_rejected():
    dec = make_decoder(max_seq_len=12)
    with pytest.raises(SequenceOverflowError, match="rows"):
        dec.build_prefix([[5] * 10], features(4))


def test_nll_overflow_rejected_with_lengths():
    dec = make_decoder(max_seq_len=12)
    with pytest.raises(SequenceOverflowError, match="12"):
        dec.nll_loss(features(6), frame([5] * 8), MODE_LOW)


def test_mode_rows_differ():
    dec = make_decoder(seed=17)
    prefix = features(2, seed=18)
    low = dec.nll_loss(prefix, frame([5]), MODE_LOW).item()
    final = dec.nll_loss(prefix, frame([5]), MODE_FINAL).item()
    assert low != final
