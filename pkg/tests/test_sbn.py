import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import all_bits, central_diff, randomize, rel
from vimco.core import make_rng
from vimco.sbn import PriorProposal, SbnModel, SbnProposal, flatten, unflatten


def split(bits, sizes):
    out, i = [], 0
    for s in sizes:
        out.append(bits[:, i:i + s])
        i += s
    return tuple(out)


def test_zero_model_units_have_mean_half():
    m = SbnModel((3, 2), 4)
    h, probs = m.sample_prior(make_rng(0), n=5)
    np.testing.assert_array_equal(probs, 0.5)
    assert m.net.means("h0", {}).tolist() == [[0.5] * 3]


def test_saturated_model_gives_fixed_stack():
    m = SbnModel((3, 2), 4)
    m.params["h0.b"][:] = [50, -50, 50]
    m.params["h1.b"][:] = [-50, 50]
    for seed in range(5):
        h, _ = m.sample_prior(make_rng(seed))
        assert h[0].tolist() == [1, 0, 1] and h[1].tolist() == [0, 1]


def test_sampling_is_seeded():
    rng = make_rng(2)
    m = SbnModel((4,), 5, 3).init_params(rng, std=1.0)
    c = np.ones(3)
    a = m.sample_prior(make_rng(9), context=c)
    b = m.sample_prior(make_rng(9), context=c)
    assert np.array_equal(a[0][0], b[0][0]) and np.array_equal(a[1], b[1])
    q = SbnProposal((4,), 5).init_params(rng, std=1.0)
    x = np.ones(5)
    ha, la = q.sample(x, make_rng(1))
    hb, lb = q.sample(x, make_rng(1))
    assert np.array_equal(ha[0], hb[0]) and la == lb


def test_two_fair_coins():
    m = SbnModel((1,), 1)
    for x in (0.0, 1.0):
        for h in (0.0, 1.0):
            assert m.log_joint(np.array([x]), (np.array([h]),)) == pytest.approx(-2 * np.log(2), abs=1e-15)


@pytest.mark.parametrize("latent,obs,ctx", [((2,), 3, 0), ((2, 3), 2, 0), ((3, 2), 3, 2), ((4,), 2, 3)])
def test_normalization(latent, obs, ctx):
    rng = make_rng(11)
    m = SbnModel(latent, obs, ctx)
    randomize(m.params, rng, 1.5)
    c = None if not ctx else (rng.random(ctx) < 0.5).astype(float)
    d = sum(latent)
    bits = all_bits(d + obs)
    H = split(bits[:, :d], latent)
    X = bits[:, d:]
    C = None if c is None else np.repeat(c[None], len(bits), axis=0)
    assert np.exp(m.log_joint(X, H, C)).sum() == pytest.approx(1.0, abs=1e-9)
    q = SbnProposal(latent, obs, ctx)
    randomize(q.params, rng, 1.5)
    hb = all_bits(d)
    x = np.repeat(X[5:6], len(hb), axis=0)
    Cq = None if c is None else np.repeat(c[None], len(hb), axis=0)
    assert np.exp(q.log_q(x, split(hb, latent), Cq)).sum() == pytest.approx(1.0, abs=1e-9)


def test_bias_monotonicity():
    rng = make_rng(4)
    m = SbnModel((3,), 4).init_params(rng, std=1.0)
    x, h = np.array([1.0, 0, 1, 1]), (np.array([1.0, 0, 1]),)
    before = m.log_joint(x, h)
    m.params["h0.b"][0] += 0.5
    assert m.log_joint(x, h) > before


def test_gradient_hand_values():
    m = SbnModel((1,), 1)
    g = m.grad_log_joint(np.array([1.0]), (np.array([1.0]),))
    assert g["x.W_h0"][0, 0] == 0.5
    assert g["x.b"][0] == 0.5
    assert g["h0.b"][0] == 0.5
    g = m.grad_log_joint(np.array([1.0]), (np.array([0.0]),))
    assert g["x.W_h0"][0, 0] == 0.0          # parent inactive


def test_weight_gradient_zero_for_inactive_parents():
    rng = make_rng(5)
    m = SbnModel((4,), 3).init_params(rng, std=1.0)
    h = np.array([1.0, 0.0, 1.0, 0.0])
    g = m.grad_log_joint(np.array([0.0, 1, 1]), (h,))
    assert np.all(g["x.W_h0"][:, h == 0] == 0)


def test_zero_proposal():
    q = SbnProposal((3, 2), 4)
    h, lq = q.sample(np.ones(4), make_rng(0))
    assert lq == pytest.approx(-5 * np.log(2), abs=1e-14)
    g = q.grad_log_q(np.ones(4), h)
    np.testing.assert_allclose(g["h0.b"], h[0] - 0.5)
    np.testing.assert_allclose(g["h1.b"], h[1] - 0.5)


def _instances():
    cases = []
    for i in range(24):
        latent = [(2,), (3, 2), (2, 2, 2), (4,)][i % 4]
        ctx = [0, 3][i % 2]
        cases.append((i, latent, 3 + i % 3, ctx))
    return cases


@pytest.mark.parametrize("seed,latent,obs,ctx", _instances())
def test_gradients_match_finite_differences(seed, latent, obs, ctx):
    rng = make_rng(100 + seed)
    m = SbnModel(latent, obs, ctx)
    randomize(m.params, rng)
    q = SbnProposal(latent, obs, ctx, x_mean=rng.random(obs), c_mean=rng.random(ctx) if ctx else None)
    randomize(q.params, rng)
    x = (rng.random(obs) < 0.5).astype(float)
    c = (rng.random(ctx) < 0.5).astype(float) if ctx else None
    h, _ = q.sample(x, rng, c)
    fd = central_diff(lambda: m.log_joint(x, h, c), m.params)
    assert rel(m.grad_log_joint(x, h, c), fd) <= 1e-6
    fd = central_diff(lambda: q.log_q(x, h, c), q.params)
    assert rel(q.grad_log_q(x, h, c), fd) <= 1e-6


def test_prior_proposal_delegates_and_shares_parameters():
    rng = make_rng(8)
    m = SbnModel((3, 2), 4, 2).init_params(rng, std=1.0)
    p = PriorProposal(m)
    c = np.array([1.0, 0.0])
    h, lq = p.sample(np.zeros(4), make_rng(3), c)
    assert lq == pytest.approx(m.log_prior(h, c))
    ref, _ = m.sample_prior(make_rng(3), context=c, n=1)
    assert np.array_equal(h[0], ref[0][0])
    p.params["h0.b"][:] += 1.0
    assert np.all(m.params["h0.b"] == p.params["h0.b"])
    fd = central_diff(lambda: p.log_q(None, h, c), p.params)
    assert rel(p.grad_log_q(None, h, c), fd) <= 1e-6
    assert set(p.params) == set(m.param_names("prior"))


def test_zeroed_context_weights_match_unconditional():
    rng = make_rng(9)
    u = SbnModel((3, 2), 4).init_params(rng, std=1.0)
    c = SbnModel((3, 2), 4, 5)
    c.net.set_params(u.params)
    x = np.array([[1.0, 0, 1, 1], [0, 0, 1, 0]])
    h = (np.array([[1.0, 0, 1], [0, 1, 1]]), np.array([[1.0, 1], [0, 0]]))
    ctx = np.ones((2, 5))
    assert np.array_equal(u.log_joint(x, h), c.log_joint(x, h, ctx))
    u_h, u_p = u.sample_prior(make_rng(1), n=2)
    c_h, c_p = c.sample_prior(make_rng(1), context=ctx, n=2)
    assert np.array_equal(u_p, c_p) and all(np.array_equal(a, b) for a, b in zip(u_h, c_h))


def test_context_errors():
    m = SbnModel((2,), 3, 2)
    with pytest.raises(ValueError):
        m.log_joint(np.zeros(3), (np.zeros(2),))
    with pytest.raises(ValueError):
        SbnModel((2,), 3).log_joint(np.zeros(3), (np.zeros(2),), context=np.zeros(2))
    with pytest.raises(ValueError):
        SbnModel((2,), 3).log_joint(np.zeros(4), (np.zeros(2),))
    with pytest.raises(ValueError):
        SbnModel((2,), 3).log_joint(np.zeros(3), (np.zeros(2), np.zeros(1)))


def test_per_sample_grad_rows_sum_to_weighted_grad():
    rng = make_rng(12)
    m = SbnModel((3, 2), 4, 2).init_params(rng, std=1.0)
    c = (rng.random((6, 2)) < 0.5).astype(float)
    x, h = m.sample_joint(rng, context=c)
    w = rng.random(6)
    rows = m.per_sample_grad(x, h, c)
    shapes = m.net.param_shapes()
    np.testing.assert_allclose(w @ rows, flatten(m.grad_log_joint(x, h, c, weights=w), shapes), atol=1e-12)


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(1, 5))
def test_flatten_roundtrip(latent, obs):
    m = SbnModel(tuple(latent), obs).init_params(make_rng(0), std=1.0)
    shapes = m.net.param_shapes()
    back = unflatten(flatten(m.params, shapes), shapes)
    assert all(np.array_equal(back[k], m.params[k]) for k in shapes)


def test_deep_architecture_is_representable():
    m = SbnModel((200, 200, 200), 784)
    q = SbnProposal((200, 200, 200), 784)
    assert m.params["x.W_h2"].shape == (784, 200)
    assert q.params["h2.W_x"].shape == (200, 784)
    assert q.params["h0.W_h1"].shape == (200, 200)
