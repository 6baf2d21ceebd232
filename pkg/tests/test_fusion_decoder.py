from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import tiny_doc, tiny_model
from entsum.autograd import Tensor, cross_entropy, grad, parameter
from entsum.corpus import EOS, ContractError
from entsum.encoder import encode_document
from entsum.fusion_decoder import (
    GateParams,
    beam_search,
    decoder_logits,
    decoder_memory,
    fuse_images,
    gate_weight,
    greedy_decode,
    summarization_loss,
)


def _gate(d, dg, W1=None, b1=None, W2=None, b2=None):
    return GateParams(
        Tensor(np.zeros((2 * d, dg)) if W1 is None else W1),
        Tensor(np.zeros(dg) if b1 is None else b1),
        Tensor(np.zeros((dg, 1)) if W2 is None else W2),
        Tensor(np.zeros(1) if b2 is None else b2),
    )


def test_zero_gate_is_half(rng):
    w = gate_weight(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=(2, 3))), _gate(3, 5))
    assert w.shape == (1,) and w.item() == 0.5


def test_gate_hand_example():
    gate = _gate(1, 1, W1=np.array([[1.0], [1.0]]), W2=np.array([[1.0]]))
    w = gate_weight(Tensor([[0.3]]), Tensor([[0.7]]), gate)
    assert abs(w.item() - 1 / (1 + math.exp(-1.0))) < 1e-15
    assert round(w.item(), 5) == 0.73106


def test_gate_saturates():
    w = gate_weight(Tensor(np.ones((2, 3))), Tensor(np.ones((1, 3))), _gate(3, 4, b2=np.array([20.0])))
    assert w.item() > 0.999999


def test_gate_pools_over_positions():
    gate = _gate(1, 1, W1=np.array([[1.0], [1.0]]), W2=np.array([[1.0]]))
    a = gate_weight(Tensor([[0.1], [0.5]]), Tensor([[0.4], [1.0]]), gate)
    b = gate_weight(Tensor([[0.3]]), Tensor([[0.7]]), gate)
    assert abs(a.item() - b.item()) < 1e-15


def test_gate_needs_entity_rows():
    with pytest.raises(ContractError):
        gate_weight(Tensor(np.ones((2, 3))), Tensor(np.zeros((0, 3))), _gate(3, 2))


def test_gate_strictly_inside_unit_interval():
    rng = np.random.default_rng(0)
    for _ in range(200):
        d, dg = rng.integers(1, 6, size=2)
        gate = _gate(d, dg, rng.normal(size=(2 * d, dg)), rng.normal(size=dg), rng.normal(size=(dg, 1)),
                     rng.normal(size=1))
        w = gate_weight(Tensor(rng.normal(size=(3, d))), Tensor(rng.normal(size=(2, d))), gate).item()
        assert 0.0 < w < 1.0


@pytest.mark.parametrize("w, pick", [(1.0, 0), (0.0, 1)])
def test_fusion_boundaries_bitwise(rng, w, pick):
    a, b = Tensor(rng.normal(size=(6, 4))), Tensor(rng.normal(size=(6, 4)))
    out = fuse_images(a, b, Tensor([w]))
    assert np.array_equal(out.data, (a, b)[pick].data)


def test_fusion_arithmetic():
    assert fuse_images(Tensor([[4.0]]), Tensor([[0.0]]), 0.25).data.tolist() == [[1.0]]


def test_fusion_shape_mismatch():
    with pytest.raises(ContractError):
        fuse_images(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))), 0.5)


@settings(max_examples=80, deadline=None)
@given(hnp.arrays(np.float64, (2, 5, 3), elements=st.floats(-1e3, 1e3, allow_nan=False)),
       st.floats(1e-6, 1 - 1e-6))
def test_fusion_is_convex(pair, w):
    a, b = pair
    out = fuse_images(Tensor(a), Tensor(b), w).data
    tol = 1e-9 * (1 + np.abs(pair).max())
    assert np.all(out >= np.minimum(a, b) - tol) and np.all(out <= np.maximum(a, b) + tol)


def test_fusion_derivative_wrt_weight(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    w = parameter(np.array([0.37]))
    out = fuse_images(Tensor(a), Tensor(b), w)
    jac = np.array([grad(out[i, j].reshape(1), [w])[0][0] for i in range(3) for j in range(4)]).reshape(3, 4)
    np.testing.assert_allclose(jac, a - b, atol=1e-8)


def test_memory_concat(rng):
    t, v = Tensor(rng.normal(size=(12, 4))), Tensor(rng.normal(size=(10, 4)))
    mem = decoder_memory(t, v)
    assert mem.shape == (22, 4)
    assert np.array_equal(mem.data[:12], t.data)


def test_memory_without_images(rng):
    t = Tensor(rng.normal(size=(5, 4)))
    assert np.array_equal(decoder_memory(t, Tensor(np.zeros((0, 4)))).data, t.data)


# -- loss ---------------------------------------------------------------------------------------

def _memory(model, rng):
    return Tensor(rng.normal(size=(6, model.config.d_model)))


def test_uniform_predictions(rng):
    m = tiny_model()
    m["enc.W_t"].data[:] = 0.0
    target = [7, 9, 11, 8]
    loss = summarization_loss(m, _memory(m, rng), target)
    # the loss also scores the end-of-summary token: len(target) + 1 positions
    assert abs(loss.item() - (len(target) + 1) * math.log(m.config.vocab_size)) < 1e-12
    mean = summarization_loss(m, _memory(m, rng), target, reduction="mean")
    assert abs(mean.item() - math.log(m.config.vocab_size)) < 1e-12


def test_certain_predictions_zero_loss(rng):
    m = tiny_model()
    m["enc.W_t"].data[:] = 0.0
    m["dec.out_bias"].data[EOS] = 1e3
    assert summarization_loss(m, _memory(m, rng), [EOS, EOS]).item() == 0.0


def test_single_word_vocabulary_zero_loss():
    assert cross_entropy(Tensor(np.random.default_rng(0).normal(size=(4, 1))), [0, 0, 0, 0]).item() == 0.0


def test_empty_target(rng):
    m = tiny_model()
    with pytest.raises(ContractError):
        summarization_loss(m, _memory(m, rng), [])


def test_causal_logits(rng):
    m = tiny_model()
    mem = _memory(m, rng)
    ids = [5, 9, 10, 11, 12]
    base = decoder_logits(m, mem, ids).data
    for j in range(len(ids) - 1):
        changed = ids[: j + 1] + [int(t) for t in rng.integers(7, 20, size=len(ids) - j - 1)]
        out = decoder_logits(m, mem, changed).data
        np.testing.assert_array_equal(out[: j + 1], base[: j + 1])


# -- decoding -----------------------------------------------------------------------------------

def test_immediate_end_token(rng):
    m = tiny_model()
    m["enc.W_t"].data[:] = 0.0
    m["dec.out_bias"].data[:] = -1e9
    m["dec.out_bias"].data[7] = 0.0
    m["dec.out_bias"].data[EOS] = math.log(9.0)  # p(EOS) = 0.9, p(a) = 0.1
    assert beam_search(m, _memory(m, rng), beam_size=3) == []
    assert greedy_decode(m, _memory(m, rng)) == []


@pytest.mark.parametrize("seed", range(10))
def test_beam_one_is_greedy(seed):
    m = tiny_model(seed=seed, init_std=0.5)
    mem = _memory(m, np.random.default_rng(seed))
    assert beam_search(m, mem, beam_size=1) == greedy_decode(m, mem)


@pytest.mark.parametrize("seed", range(5))
def test_beam_respects_max_len(seed):
    m = tiny_model(seed=seed, init_std=0.5)
    mem = _memory(m, np.random.default_rng(seed))
    for k in (1, 2, 5):
        out = beam_search(m, mem, beam_size=k, max_len=4)
        assert len(out) <= 4 and EOS not in out


def test_beam_deterministic(rng):
    m = tiny_model(init_std=0.5)
    mem = _memory(m, rng)
    assert beam_search(m, mem, 4) == beam_search(m, mem, 4)


def test_document_memory_shape(rng):
    m = tiny_model()
    doc = tiny_doc(rng, m.config, n_images=2)
    enc = encode_document(m, doc)
    mem = decoder_memory(enc.h_T_ti, fuse_images(enc.h_V_ti, enc.h_V_ei, 0.5))
    assert mem.shape == (doc.text_rows() + doc.image_rows(), 8)
