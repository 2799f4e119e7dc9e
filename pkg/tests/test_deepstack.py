import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsisae.autoenc import AeHyper, AeParams, ae_forward, ae_init, sgd_train
from hsisae.deepstack import (
    FinetuneHyper,
    SaeModel,
    SoftmaxHead,
    add_head,
    encode_deep,
    finetune,
    finetune_grads,
    load_sae,
    nll,
    predict,
    predict_proba,
    pretrain_stack,
    save_sae,
    softmax_forward,
    softmax_rows,
    stack_grad_check,
    train_ae,
)
from hsisae.errors import ContractError, HeaderError, ShapeError
from hsisae.numkit import Rng, derive_seed


def random_model(sizes, n_classes, seed):
    rng = Rng(seed)
    layers = []
    for i in range(len(sizes) - 1):
        p = ae_init(sizes[i], sizes[i + 1], seed + i)
        p.b_y = rng.uniform(-0.5, 0.5, size=sizes[i + 1])
        layers.append(p)
    head = SoftmaxHead(rng.uniform(-1, 1, size=(sizes[-1], n_classes)), rng.uniform(-0.5, 0.5, size=n_classes))
    return SaeModel(layers, head)


# --- model structure -----------------------------------------------------------


def test_chain_consistency_enforced():
    with pytest.raises(ShapeError):
        SaeModel([ae_init(5, 4, 0), ae_init(3, 2, 0)])
    with pytest.raises(ShapeError):
        SaeModel([ae_init(5, 4, 0)], SoftmaxHead(np.zeros((3, 2)), np.zeros(2)))


def test_sizes_include_head():
    model = add_head(SaeModel([ae_init(6, 4, 0), ae_init(4, 4, 1)]), 3)
    assert model.sizes == [6, 4, 4, 3]


# --- pretraining ------------------------------------------------------------------


def test_pretrain_layer_shapes():
    X = Rng(0).random((30, 12))
    model = pretrain_stack([12, 8, 8], X, AeHyper(epochs=2))
    assert [(l.d, l.h) for l in model.layers] == [(12, 8), (8, 8)]
    assert model.head is None


def test_pretrain_single_layer_equals_plain_training():
    X = Rng(1).random((25, 6))
    hyper = AeHyper(epochs=4, seed=3)
    model = pretrain_stack([6, 4], X, hyper)
    params, _ = sgd_train(ae_init(6, 4, derive_seed(3, "init")), X, hyper)
    assert model.layers[0] == params
    assert train_ae(6, 4, X, hyper)[0] == params


def test_pretrain_second_layer_sees_first_layer_codes():
    X = Rng(2).random((20, 5))
    seen = []
    model = pretrain_stack([5, 3, 2], X, AeHyper(epochs=2), on_layer=lambda i, hist: seen.append(i))
    codes = model.layers[0].encode(X)
    assert seen == [0, 1]
    assert np.all(codes > 0) and np.all(codes < 1)
    layer2_seed = derive_seed(AeHyper(epochs=2).seed, "layer", 1)
    expected, _ = train_ae(3, 2, codes, AeHyper(epochs=2, seed=layer2_seed))
    assert model.layers[1] == expected


def test_pretrain_per_layer_hypers():
    X = Rng(2).random((20, 5))
    hypers = [AeHyper(epochs=1, seed=1), AeHyper(epochs=2, seed=2)]
    model = pretrain_stack([5, 3, 2], X, hypers)
    assert model.layers[0] == train_ae(5, 3, X, hypers[0])[0]
    with pytest.raises(ContractError):
        pretrain_stack([5, 3, 2], X, hypers[:1])


def test_pretrain_input_mismatch():
    with pytest.raises(ShapeError):
        pretrain_stack([4, 2], np.zeros((3, 5)), AeHyper(epochs=1))


# --- encoding -----------------------------------------------------------------------


def test_encode_empty_stack_is_identity():
    X = Rng(0).random((3, 4))
    np.testing.assert_array_equal(encode_deep(SaeModel([]), X), X)


def test_encode_zero_layer():
    model = SaeModel([AeParams(np.zeros((4, 3)), np.zeros(3), np.zeros(4))])
    assert np.all(encode_deep(model, Rng(0).random((2, 4))) == 0.5)


def test_encode_matches_composed_scalar_loops():
    model = random_model([4, 3, 2], 2, 7)
    X = Rng(8).random((3, 4))
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    expected = np.zeros((3, 2))
    for i in range(3):
        a = list(X[i])
        for layer in model.layers:
            a = [sig(sum(a[k] * layer.W[k, q] for k in range(layer.d)) + layer.b_y[q]) for q in range(layer.h)]
        expected[i] = a
    np.testing.assert_allclose(encode_deep(model, X), expected, rtol=1e-13)
    # composition of the autoencoder hidden layers
    first = ae_forward(model.layers[0], X).Y
    np.testing.assert_allclose(encode_deep(model, X), ae_forward(model.layers[1], first).Y, rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 3))
def test_encode_range(seed, depth):
    sizes = [6] + [4] * depth
    model = random_model(sizes, 2, seed)
    out = encode_deep(model, Rng(seed).random((5, 6)))
    assert np.all(out > 0) and np.all(out < 1)


# --- softmax ------------------------------------------------------------------------


def test_softmax_known_values():
    p = softmax_rows(np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_allclose(p[0], [0.09003, 0.24473, 0.66524], atol=5e-6)
    e = [math.exp(v) for v in (1, 2, 3)]
    np.testing.assert_allclose(p[0], [v / sum(e) for v in e], rtol=1e-14)


def test_softmax_zero_head_uniform():
    head = SoftmaxHead.zeros(4, 5)
    np.testing.assert_allclose(softmax_forward(head, Rng(0).random((3, 4))), 0.2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(-1e3, 1e3))
def test_softmax_rows_sum_and_shift(seed, shift):
    a = Rng(seed).uniform(-50, 50, size=(4, 6))
    p = softmax_rows(a)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    shifted = softmax_rows(a + shift)
    assert np.array_equal(np.argmax(p, axis=1), np.argmax(shifted, axis=1))


def test_softmax_extreme_logits():
    p = softmax_rows(np.array([[1000.0, -1000.0, 0.0]]))
    assert np.all(np.isfinite(p)) and p[0, 0] == 1.0


# --- prediction -----------------------------------------------------------------------


def test_predict_uniform_tie_goes_to_first_class():
    model = add_head(SaeModel([ae_init(3, 2, 0)]), 4)
    assert np.all(predict(model, Rng(0).random((5, 3))) == 1)


def test_predict_argmax():
    layer = AeParams(np.zeros((1, 1)), np.zeros(1), np.zeros(1))
    head = SoftmaxHead(np.zeros((1, 3)), np.log([0.1, 0.7, 0.2]))
    model = SaeModel([layer], head)
    assert predict(model, np.array([[0.3]]))[0] == 2


def test_predict_needs_head():
    with pytest.raises(ContractError):
        predict(SaeModel([ae_init(3, 2, 0)]), np.zeros((1, 3)))


def test_predict_proba_rows_sum_to_one():
    model = random_model([5, 4, 3], 4, 2)
    np.testing.assert_allclose(predict_proba(model, Rng(1).random((6, 5))).sum(axis=1), 1.0, atol=1e-12)


# --- gradients ------------------------------------------------------------------------


def test_full_stack_grad_check_reference():
    assert stack_grad_check([6, 4], 3, 5, seed=0) < 1e-6


@pytest.mark.parametrize("sizes", [[6, 4], [6, 4, 4], [5, 4, 3, 3]])
@pytest.mark.parametrize("seed", range(3))
def test_full_stack_grad_check_depths(sizes, seed):
    assert stack_grad_check(sizes, 3, 5, seed) < 1e-6


def test_head_gradient_closed_form():
    model = random_model([4, 3], 2, 5)
    X = Rng(6).random((4, 4))
    labels = np.array([1, 2, 2, 1])
    _, (dW_o, db_o) = finetune_grads(model, X, labels)
    H = encode_deep(model, X)
    P = softmax_forward(model.head, H)
    onehot = np.eye(2)[labels - 1]
    np.testing.assert_allclose(db_o, (P - onehot).mean(axis=0), rtol=1e-13)
    np.testing.assert_allclose(dW_o, H.T @ (P - onehot) / 4, rtol=1e-13)


def test_finetune_grads_bad_labels():
    model = random_model([4, 3], 2, 5)
    with pytest.raises(ContractError):
        finetune_grads(model, np.zeros((2, 4)), np.array([1, 3]))
    with pytest.raises(ShapeError):
        finetune_grads(model, np.zeros((2, 4)), np.array([1]))


# --- fine-tuning ----------------------------------------------------------------------


def test_finetune_alpha_zero_freezes_layers():
    model = add_head(SaeModel([ae_init(5, 3, 0), ae_init(3, 3, 1)]), 2)
    X = Rng(0).random((12, 5))
    y = np.array([1, 2] * 6)
    trained, _ = finetune(model, X, y, FinetuneHyper(alpha=0.0, epochs=3))
    for before, after in zip(model.layers, trained.layers):
        assert before == after
    assert not np.array_equal(trained.head.W_o, model.head.W_o)


def test_finetune_does_not_mutate_input():
    model = add_head(SaeModel([ae_init(5, 3, 0)]), 2)
    snapshot = model.copy()
    finetune(model, Rng(0).random((8, 5)), np.array([1, 2] * 4), FinetuneHyper(epochs=2))
    assert model.layers[0] == snapshot.layers[0]
    assert np.array_equal(model.head.W_o, snapshot.head.W_o)


def test_finetune_deterministic():
    model = add_head(SaeModel([ae_init(5, 3, 0)]), 2)
    X = Rng(0).random((15, 5))
    y = np.array([1, 2, 2] * 5)
    hyper = FinetuneHyper(epochs=4, batch_size=4, seed=9)
    a, ha = finetune(model, X, y, hyper)
    b, hb = finetune(model, X, y, hyper)
    assert ha == hb and a.layers[0] == b.layers[0]


def test_finetune_separable_codes_reach_zero_error():
    # codes already separate the classes: class c lights up hidden unit c
    rng = Rng(4)
    y = np.repeat([1, 2, 3], 10)
    X = np.full((30, 3), 0.1) + 0.05 * rng.random((30, 3))
    X[np.arange(30), y - 1] = 0.9
    layer = AeParams(np.eye(3) * 8.0, np.full(3, -4.0), np.zeros(3))
    model = add_head(SaeModel([layer]), 3)
    trained, history = finetune(model, X, y, FinetuneHyper(epochs=200, batch_size=10))
    errors = np.mean(predict(trained, X) != y)
    assert errors == 0.0
    assert history[-1] < history[0]


@pytest.mark.parametrize("seed", range(20))
def test_small_rate_full_batch_nll_non_increasing(seed):
    model = random_model([6, 4, 3], 3, seed)
    model.head.W_o *= 0.5
    rng = Rng(seed + 50)
    X = rng.random((8, 6))
    y = (np.arange(8) % 3) + 1
    start = nll(model, X, y)
    _, history = finetune(model, X, y, FinetuneHyper(learning_rate=1e-3, alpha=1.0, epochs=10, batch_size=8))
    losses = [start] + list(history)
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


@pytest.mark.parametrize(
    "kwargs", [dict(learning_rate=0.0), dict(alpha=1.5), dict(alpha=-0.1), dict(epochs=0), dict(batch_size=0)]
)
def test_finetune_hyper_validation(kwargs):
    with pytest.raises(ContractError):
        FinetuneHyper(**kwargs)


# --- serialisation ----------------------------------------------------------------------


def test_sae_roundtrip(tmp_path):
    model = random_model([5, 4, 3], 2, 1)
    model.alpha = 0.25
    save_sae(model, tmp_path / "m.sae")
    back = load_sae(tmp_path / "m.sae")
    assert back.sizes == [5, 4, 3, 2] and back.alpha == 0.25
    for a, b in zip(model.layers, back.layers):
        assert a == b
    np.testing.assert_array_equal(back.head.W_o, model.head.W_o)
    header = (tmp_path / "m.sae").read_bytes().split(b"\n", 1)[0]
    assert header == b'{"type":"sae","sizes":[5,4,3,2],"has_head":true,"alpha":0.25}'


def test_sae_roundtrip_without_head(tmp_path):
    model = SaeModel([ae_init(4, 3, 0)])
    save_sae(model, tmp_path / "m.sae")
    back = load_sae(tmp_path / "m.sae")
    assert back.head is None and back.layers[0] == model.layers[0]


def test_sae_bad_header(tmp_path):
    path = tmp_path / "m.sae"
    save_sae(SaeModel([ae_init(4, 3, 0)]), path)
    raw = path.read_bytes()
    path.write_bytes(raw.replace(b'"has_head":false', b'"has_head":"no"', 1))
    with pytest.raises(HeaderError):
        load_sae(path)
