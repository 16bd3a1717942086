import numpy as np
import pytest
from scipy.special import expit

import subcon
from subcon import autodiff as ad
from subcon.connectivity import SubgraphView
from subcon.encoder import EncoderParams, embed_duo, encode, readout


def single_node_view(x):
    x = np.asarray(x, dtype=np.float64)[None, :]
    return SubgraphView(centric=0, members=np.array([0]),
                        adj_norm=np.ones((1, 1)), features=x,
                        weights=np.array([1.0]))


def small_view(rng, n=4, d=3, centric_first=None):
    members = np.arange(n) if centric_first is None else centric_first
    adj = (rng.random((n, n)) < 0.6).astype(float)
    adj = np.triu(adj, 1)
    adj = adj + adj.T + np.eye(n)
    dhat = adj.sum(1)
    adj_norm = adj / np.sqrt(np.outer(dhat, dhat))
    feats = rng.standard_normal((n, d))
    w = rng.random(n)
    return SubgraphView(centric=int(members[0]), members=members,
                        adj_norm=adj_norm, features=feats, weights=w / w.sum())


def identity_params(d):
    return EncoderParams(ad.parameter(np.eye(d)), ad.parameter(1.0))


def test_encode_identity_single_node():
    params = identity_params(2)
    z = encode(params, single_node_view([3.0, 4.0]))
    assert np.allclose(z.data, [[0.6, 0.8]])


def test_encode_rows_unit_norm():
    rng = np.random.default_rng(1)
    params = EncoderParams.init(3, 8, seed=0)
    z = encode(params, small_view(rng))
    assert np.allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-9)


def test_encode_permutation_equivariance():
    """Permuting non-centric members leaves the centric row unchanged."""
    rng = np.random.default_rng(5)
    view = small_view(rng, n=5, d=3)
    perm = np.array([0, 3, 1, 4, 2])
    view_p = SubgraphView(centric=0, members=view.members[perm],
                          adj_norm=view.adj_norm[np.ix_(perm, perm)],
                          features=view.features[perm],
                          weights=view.weights[perm])
    params = EncoderParams.init(3, 6, seed=2)
    z = encode(params, view).data
    z_p = encode(params, view_p).data
    assert np.allclose(z[0], z_p[0], atol=1e-12)


def test_encode_shape_mismatch():
    params = EncoderParams.init(5, 4, seed=0)
    with pytest.raises(ad.ShapeError, match="feature columns"):
        encode(params, single_node_view([1.0, 2.0]))


def test_readout_uniform_identical_rows():
    rows = np.tile(np.array([0.2, -0.4, 1.0]), (4, 1))
    out = readout(ad.constant(rows), np.full(4, 0.25))
    assert np.allclose(out.data, expit(rows[0]))


def test_readout_one_hot():
    rng = np.random.default_rng(8)
    rows = rng.standard_normal((4, 3))
    w = np.zeros(4)
    w[2] = 1.0
    out = readout(ad.constant(rows), w)
    assert np.allclose(out.data, expit(rows[2]))


def test_readout_hand_weighted_sum():
    rows = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
    w = np.array([0.3, 0.35, 0.35])
    expected = expit(w @ rows)
    out = readout(ad.constant(rows), w)
    assert np.allclose(out.data, expected)


def test_readout_weights_must_sum_to_one():
    with pytest.raises(ValueError, match="sum to 1"):
        readout(ad.constant(np.zeros((2, 2))), np.array([0.5, 0.4]))


def test_embed_duo_single_node_zprime_is_sigmoid_z():
    params = identity_params(2)
    duo = embed_duo(params, single_node_view([3.0, 4.0]), label=1)
    assert np.allclose(duo.zprime.data, expit(duo.z.data))
    assert duo.label == 1


def test_embed_duo_deterministic():
    rng = np.random.default_rng(3)
    view = small_view(rng)
    params = EncoderParams.init(3, 4, seed=1)
    a = embed_duo(params, view, 0)
    b = embed_duo(params, view, 0)
    assert a.z.data.tobytes() == b.z.data.tobytes()
    assert a.zprime.data.tobytes() == b.zprime.data.tobytes()


def test_embed_duo_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    view = small_view(rng, n=6, d=3)
    params = EncoderParams.init(3, 4, seed=9)

    def loss_of(wdata):
        p = EncoderParams(ad.parameter(wdata), ad.parameter(0.25))
        duo = embed_duo(p, view, 0)
        return ad.weighted_sum(ad.vstack([duo.z, duo.zprime]),
                               np.arange(8.0).reshape(2, 4))

    loss = loss_of(params.weight.data)
    ad.backward(loss)
    grads = [v.grad for v in _collect_params(loss)]
    analytic = grads[0]

    h = 1e-5
    w0 = params.weight.data
    num = np.zeros_like(w0)
    for idx in np.ndindex(*w0.shape):
        wp = w0.copy()
        wp[idx] += h
        wm = w0.copy()
        wm[idx] -= h
        num[idx] = (float(loss_of(wp).data) - float(loss_of(wm).data)) / (2 * h)
    rel = np.abs(analytic - num).max() / max(np.abs(num).max(), 1e-10)
    assert rel < 1e-4


def _collect_params(loss):
    out, seen, stack = [], set(), [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.requires_grad and node.shape != ():
            out.append(node)
        stack.extend(node._parents)
    return out


def test_checkpoint_roundtrip(tmp_path):
    params = EncoderParams.init(5, 8, seed=3)
    p = tmp_path / "enc.npz"
    params.save(p, rng_state={"step": 12})
    loaded = EncoderParams.load(p)
    assert np.array_equal(loaded.weight.data, params.weight.data)
    assert loaded.slope.data == params.slope.data
    assert EncoderParams.load_rng_state(p) == {"step": 12}


def test_init_requires_embed_dim():
    with pytest.raises(ValueError, match="embed_dim"):
        EncoderParams.init(4, 1)
