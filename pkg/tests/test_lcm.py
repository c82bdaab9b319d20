import numpy as np
import pytest
from hypothesis import given, strategies as st

from landmark import tensor as T
from landmark.checks import module_gradchecks
from landmark.config import RunConfig
from landmark.lcm import ContextEncoder, EmptySceneError, fuse_entity, mhsa
from landmark.tensor import Tensor


def encoder(**kw):
    args = dict(n_classes=6, embed_dim=8, d=8, n_layers=2, n_heads=2, seed=0)
    args.update(kw)
    return ContextEncoder(**args)


def test_zero_box_projection_only_class_matters():
    enc = encoder()
    enc.box_proj.weight.data[:] = 0
    enc.box_proj.bias.data[:] = 0
    a = enc.build_sequence([2], [[0.1, 0.2, 0.3, 0.4]]).data
    b = enc.build_sequence([2], [[0.9, 0.5, 0.1, 0.2]]).data
    assert np.array_equal(a, b)


def test_same_class_different_boxes_distinct_tokens():
    x = encoder().build_sequence([3, 3], [[0.2, 0.2, 0.1, 0.1], [0.7, 0.6, 0.2, 0.3]]).data
    assert not np.array_equal(x[0], x[1])


def test_tokens_vs_hand_computation():
    enc = encoder()
    classes, boxes = np.array([1, 4]), np.array([[0.2, 0.3, 0.1, 0.2], [0.6, 0.5, 0.3, 0.1]])
    x = enc.build_sequence(classes, boxes).data
    W, Wb, bb, Wg, bg = (enc.w_e.weights.data, enc.box_proj.weight.data, enc.box_proj.bias.data,
                         enc.gamma.weight.data, enc.gamma.bias.data)
    for i in range(2):
        lifted = [sum(boxes[i, a] * Wb[a, c] for a in range(4)) + bb[c] for c in range(8)]
        pre = [W[classes[i], c] + lifted[c] for c in range(8)]
        ref = [sum(pre[a] * Wg[a, c] for a in range(8)) + bg[c] for c in range(8)]
        np.testing.assert_allclose(x[i], ref, rtol=0, atol=1e-12)


def test_empty_scene():
    with pytest.raises(EmptySceneError):
        encoder().build_sequence([], np.zeros((0, 4)))


def test_single_token_attention():
    layer = encoder().layers[0]
    x = np.random.default_rng(0).normal(size=(1, 8))
    out, attn = mhsa(Tensor(x), layer, return_attention=True)
    assert np.array_equal(attn.data, np.ones((2, 1, 1)))
    np.testing.assert_allclose(out.data, x @ layer.w_v.data @ layer.w_o.data, atol=1e-14)


def test_mhsa_vs_per_head_loop(rng):
    layer = encoder().layers[1]
    x = rng.normal(size=(3, 8))
    out = mhsa(Tensor(x), layer).data
    q, k, v = x @ layer.w_q.data, x @ layer.w_k.data, x @ layer.w_v.data
    heads = []
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(4)
        a = np.exp(s - s.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        heads.append(a @ v[:, sl])
    np.testing.assert_allclose(out, np.concatenate(heads, axis=1) @ layer.w_o.data, rtol=0, atol=1e-10)


def test_zero_output_projections_pass_through(rng):
    enc = encoder()
    for layer in enc.layers:
        layer.w_o.data[:] = 0
        last = layer.ffn.layers[-1]
        last.weight.data[:] = 0
        last.bias.data[:] = 0
    x = rng.normal(size=(4, 8))
    assert np.array_equal(enc.encode(Tensor(x)).data, x)


@given(st.integers(1, 8), st.integers(0, 10_000))
def test_permutation_equivariance_exact(n, seed):
    rng = np.random.default_rng(seed)
    enc = encoder()
    classes = rng.integers(6, size=n)
    boxes = rng.uniform(0.05, 0.95, size=(n, 4))
    perm = rng.permutation(n)
    a = enc(classes, boxes).data
    b = enc(classes[perm], boxes[perm]).data
    assert np.array_equal(a[perm], b)


@given(st.integers(1, 8), st.integers(0, 10_000))
def test_attention_rows_stochastic(n, seed):
    rng = np.random.default_rng(seed)
    enc = ContextEncoder(20, 64, 64, 2, 4, seed=seed % 7)
    attn = []
    enc(rng.integers(20, size=n), rng.uniform(0.05, 0.95, size=(n, 4)), attn_out=attn)
    assert len(attn) == 2
    for a in attn:
        assert a.shape == (4, n, n)
        assert np.all(np.abs(a.sum(axis=-1) - 1) <= 1e-9)


def test_encoding_deterministic(rng):
    classes, boxes = rng.integers(6, size=5), rng.uniform(size=(5, 4))
    assert encoder()(classes, boxes).data.tobytes() == encoder()(classes, boxes).data.tobytes()


def test_fuse_entity(rng):
    v, c = rng.normal(size=(3, 5)), rng.normal(size=(3, 4))
    out = fuse_entity(v, c).data
    assert out.shape == (3, 9)
    assert np.array_equal(out[:, :5], v) and np.array_equal(out[:, 5:], c)
    assert not fuse_entity(v, np.zeros((3, 4))).data[:, 5:].any()


def test_heads_must_divide_width():
    with pytest.raises(ValueError):
        ContextEncoder(4, 8, 10, n_heads=3)


def test_gradcheck_two_layers_three_tokens(rng):
    enc = encoder()
    classes, boxes = np.array([0, 2, 5]), rng.uniform(0.1, 0.9, size=(3, 4))
    probe = rng.normal(size=(3, 8))
    from landmark.gradcheck import finite_diff_check

    rep = finite_diff_check(lambda: (enc(classes, boxes) * probe).sum(), dict(enc.named_parameters()))
    assert rep.passed, rep.lines()


def test_lcm_gradcheck_default_config():
    rep = module_gradchecks(RunConfig(), modules=("lcm",))["lcm"]
    assert rep.passed, rep.lines()
