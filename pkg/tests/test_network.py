import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmfn import autodiff as ad
from cmfn.network import (MFN, ConfigurationError, ShapeError, get_params, load_params, mfn_forward, mfn_init,
                          param_count, params_from_dict, params_to_dict, save_params, set_params)


@pytest.mark.parametrize("widths, seed, count", [((1, 20, 20, 1), 42, 481), ((2, 40, 40, 1), 7, 1801)])
def test_param_count(widths, seed, count):
    # 1*20+20 + 20*20+20 + 20*1+1 and the 2-40-40-1 analogue
    assert param_count(widths) == count
    net = mfn_init(widths, seed)
    assert net.param_count == count == len(get_params(net))


def test_init_is_deterministic():
    a, b = mfn_init((1, 20, 20, 1), 3), mfn_init((1, 20, 20, 1), 3)
    assert np.array_equal(get_params(a), get_params(b))
    assert not np.array_equal(get_params(a), get_params(mfn_init((1, 20, 20, 1), 4)))


def test_init_glorot_bounds_and_zero_bias():
    net = mfn_init((2, 40, 40, 1), 0)
    for t, b in zip(net.thetas, net.betas):
        limit = np.sqrt(6.0 / sum(t.shape))
        assert np.all(np.abs(t) <= limit)
        assert np.all(b == 0)


@pytest.mark.parametrize("widths", [(), (3,), (1, 0, 1), (1, -2, 1), (1, 2.5, 1)])
def test_init_rejects_bad_widths(widths):
    with pytest.raises(ConfigurationError):
        mfn_init(widths, 0)


def test_unknown_activation():
    with pytest.raises(ConfigurationError):
        mfn_init((1, 2, 1), 0, activation="relu")


def test_zero_parameters_give_zero_output():
    net = set_params(mfn_init((1, 5, 5, 1), 0), np.zeros(param_count((1, 5, 5, 1))))
    out = mfn_forward(net, [ad.jet_var(np.linspace(-2, 2, 7), 3)])[0]
    for k in range(4):
        assert np.all(ad.derivative(out, k) == 0)


def test_affine_net_example():
    net = set_params(mfn_init((1, 1), 0), [2.0, 3.0])
    out = mfn_forward(net, [ad.jet_var(5.0, 1)])[0]
    assert float(ad.derivative(out, 0)) == 13.0
    assert float(ad.derivative(out, 1)) == 2.0


def test_forward_dimension_mismatch():
    net = mfn_init((2, 3, 1), 0)
    with pytest.raises(ShapeError):
        mfn_forward(net, [ad.jet_var(0.0, 1)])


def _plain_forward(net, x):
    h = np.atleast_2d(x)
    for i, (t, b) in enumerate(zip(net.thetas, net.betas)):
        h = h @ t.T + b
        if i < len(net.thetas) - 1:
            h = np.tanh(h)
    return h[:, 0]


def test_first_derivative_vs_finite_differences():
    net = mfn_init((1, 20, 20, 1), 11)
    x0, h = 0.37, 1e-5
    d = float(ad.derivative(mfn_forward(net, [ad.jet_var(x0, 1)])[0], 1))
    fd = (_plain_forward(net, [[x0 + h]]) - _plain_forward(net, [[x0 - h]]))[0] / (2 * h)
    assert abs(d - fd) / abs(fd) < 1e-6


def test_order_zero_jets_match_plain_forward():
    net = mfn_init((2, 8, 8, 1), 5)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(30, 2))
    out = mfn_forward(net, [ad.jet_const(pts[:, 0], 0), ad.jet_const(pts[:, 1], 0)])[0]
    np.testing.assert_allclose(out.coeffs[0], _plain_forward(net, pts), rtol=1e-14, atol=1e-15)


def test_round_trip_and_single_entry_perturbation():
    net = mfn_init((2, 3, 2), 1)
    v = get_params(net)
    assert np.array_equal(get_params(set_params(net, v)), v)
    v2 = v.copy()
    v2[7] += 1.0
    other = set_params(net, v2)
    diffs = sum(int(np.sum(a != b)) for a, b in zip(net.thetas + net.betas, other.thetas + other.betas))
    assert diffs == 1
    # layer-major, row-major weights then biases: entry 7 is beta^(0)[1]
    assert other.betas[0][1] == net.betas[0][1] + 1.0


def test_set_params_length_mismatch():
    with pytest.raises(ShapeError):
        set_params(mfn_init((1, 2, 1), 0), np.zeros(3))


def test_last_layer_zero_weights_give_bias():
    net = mfn_init((1, 4, 1), 2)
    v = get_params(net)
    v[-5:-1] = 0.0
    v[-1] = 0.75
    out = mfn_forward(set_params(net, v), [ad.jet_var(np.linspace(0, 3, 4), 2)])[0]
    assert np.all(out.coeffs[0] == 0.75)
    assert np.all(ad.derivative(out, 1) == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3))
def test_order_eight_jets_stay_finite(seed, x0):
    widths = (1, 20, 20, 1)
    v = np.random.default_rng(seed).uniform(-10, 10, size=param_count(widths))
    net = set_params(mfn_init(widths, 0), v)
    out = mfn_forward(net, [ad.jet_var(x0, 8)])[0]
    assert all(np.all(np.isfinite(c)) for c in out.coeffs)


def test_snapshot_round_trip(tmp_path):
    net = mfn_init((1, 6, 1), 9, activation="sigmoid")
    doc = params_to_dict(net)
    assert set(doc) == {"widths", "activation", "seed", "params"}
    path = tmp_path / "params.json"
    save_params(net, path)
    back = load_params(path)
    assert isinstance(back, MFN)
    assert back.widths == net.widths and back.activation == "sigmoid" and back.seed == 9
    assert np.array_equal(get_params(back), get_params(net))
    with pytest.raises(ConfigurationError):
        params_from_dict({"widths": [1, 2, 1]})
