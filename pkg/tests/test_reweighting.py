import mpmath
import numpy as np
import pytest

from grwlab.errors import InvalidArgumentError
from grwlab.reweighting import (
    CvarScheme,
    GroupDroScheme,
    GroupInfo,
    StaticScheme,
    WeightState,
    check_assumption1,
    cvar_weights,
    erm_weights,
    gdro_init,
    gdro_step,
    group_means,
    iw_weights,
    parse_scheme,
)

SIMPLEX_TOL = 1e-12


def _assert_simplex(q):
    assert np.all(q >= 0)
    assert abs(q.sum() - 1.0) <= SIMPLEX_TOL


def test_erm_weights():
    assert np.allclose(erm_weights(4).q, 0.25)
    assert np.allclose(erm_weights(1).q, 1.0)
    assert np.allclose(erm_weights(6).q, 1.0 / 6.0)
    with pytest.raises(InvalidArgumentError):
        erm_weights(0)


def test_iw_weights_imbalanced():
    groups = GroupInfo([0] * 5 + [1])
    q = iw_weights(groups).q
    assert np.allclose(q[:5], 0.1)
    assert q[5] == pytest.approx(0.5)
    _assert_simplex(q)


def test_iw_weights_single_group_is_uniform():
    q = iw_weights(GroupInfo([0, 0, 0])).q
    assert np.allclose(q, 1.0 / 3.0)


def test_iw_weights_balanced_equals_erm():
    q = iw_weights(GroupInfo([0, 0, 1, 1, 2, 2])).q
    assert np.allclose(q, 1.0 / 6.0)


def test_iw_weighted_risk_equals_balanced_risk():
    rng = np.random.default_rng(4)
    for _ in range(50):
        labels = rng.integers(0, 3, size=12)
        labels[:3] = [0, 1, 2]  # keep every group nonempty
        groups = GroupInfo(labels)
        losses = rng.random(12)
        weighted = iw_weights(groups).q @ losses
        balanced = group_means(losses, groups).mean()
        assert weighted == pytest.approx(balanced, abs=1e-12)


def test_gdro_step_equal_risks_is_identity():
    groups = GroupInfo([0, 0, 1])
    state = gdro_init(groups)
    new = gdro_step(state, np.array([0.7, 0.7]), 0.5, groups)
    assert np.allclose(new.gdro_g, state.gdro_g, atol=1e-15)


def test_gdro_step_matches_high_precision_oracle():
    groups = GroupInfo([0, 1])
    state = WeightState(q=np.array([0.5, 0.5]), gdro_g=np.array([0.5, 0.5]))
    new = gdro_step(state, np.array([1.0, 2.0]), 0.1, groups)
    with mpmath.workdps(50):
        e1 = mpmath.mpf("0.5") * mpmath.exp(mpmath.mpf("0.1") * 1)
        e2 = mpmath.mpf("0.5") * mpmath.exp(mpmath.mpf("0.1") * 2)
        g1 = float(e1 / (e1 + e2))
        g2 = float(e2 / (e1 + e2))
    assert new.gdro_g[0] == pytest.approx(g1, abs=1e-12)
    assert new.gdro_g[1] == pytest.approx(g2, abs=1e-12)
    assert g1 == pytest.approx(0.475021, abs=1e-6)


def test_gdro_step_random_inputs_vs_mpmath():
    rng = np.random.default_rng(10)
    for _ in range(100):
        k = int(rng.integers(2, 5))
        labels = np.concatenate([[j] * int(rng.integers(1, 4)) for j in range(k)])
        groups = GroupInfo(labels)
        g = rng.dirichlet(np.ones(k))
        risks = rng.uniform(0, 3, size=k)
        nu = float(rng.uniform(0.01, 2.0))
        state = WeightState(q=np.ones(groups.n) / groups.n, gdro_g=g)
        new = gdro_step(state, risks, nu, groups)
        with mpmath.workdps(40):
            unnorm = [
                mpmath.mpf(float(g[j])) * mpmath.exp(mpmath.mpf(float(nu)) * mpmath.mpf(float(risks[j])))
                for j in range(k)
            ]
            total = mpmath.fsum(unnorm)
            ref = np.array([float(u / total) for u in unnorm])
        assert np.allclose(new.gdro_g, ref, atol=1e-12)
        _assert_simplex(new.q)
        # q_i = g_k / n_k mapping
        for i, lab in enumerate(groups.labels):
            assert new.q[i] == pytest.approx(new.gdro_g[lab] / groups.sizes[lab], abs=1e-12)


def test_gdro_step_shift_invariance():
    groups = GroupInfo([0, 0, 1, 2])
    state = gdro_init(groups)
    risks = np.array([0.3, 1.1, 0.2])
    a = gdro_step(state, risks, 0.7, groups)
    b = gdro_step(state, risks + 5.0, 0.7, groups)
    # Exact in real arithmetic; float rounding of the shifted logits leaves
    # differences at the last few ulps only.
    assert np.allclose(a.gdro_g, b.gdro_g, rtol=0, atol=1e-14)
    assert np.allclose(a.q, b.q, rtol=0, atol=1e-14)


def test_gdro_step_small_nu_continuity():
    groups = GroupInfo([0, 1])
    state = gdro_init(groups)
    nu = 1e-9
    new = gdro_step(state, np.array([1.0, 2.0]), nu, groups)
    assert np.allclose(new.gdro_g, state.gdro_g, atol=5e-9)


def test_cvar_weights_full_support_is_erm():
    q = cvar_weights(np.array([3.0, 1.0, 2.0]), 1.0).q
    assert np.allclose(q, 1.0 / 3.0)


def test_cvar_weights_single_worst():
    q = cvar_weights(np.array([3.0, 1.0, 2.0]), 1.0 / 3.0).q
    assert np.allclose(q, [1.0, 0.0, 0.0])


def test_cvar_weights_tie_break_lowest_index():
    # Oracle: stable sort on (-loss, index) then uniform mass on the first m.
    losses = np.array([2.0, 2.0, 1.0])
    q = cvar_weights(losses, 2.0 / 3.0).q
    order = sorted(range(3), key=lambda i: (-losses[i], i))
    expected = np.zeros(3)
    expected[order[:2]] = 0.5
    assert np.array_equal(q, expected)
    assert np.allclose(q, [0.5, 0.5, 0.0])


def test_cvar_support_size_always_ceil():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 12))
        losses = rng.random(n)
        alpha = float(rng.uniform(0.05, 1.0))
        q = cvar_weights(losses, alpha).q
        assert (q > 0).sum() == int(np.ceil(alpha * n))
        _assert_simplex(q)


def test_check_assumption1_constant_history():
    hist = np.tile([0.25, 0.75], (50, 1))
    ok, q_star, t_eps = check_assumption1(hist, window=10, tol=1e-6)
    assert ok
    assert q_star == pytest.approx(0.25)
    assert t_eps == 0


def test_check_assumption1_vanishing_coordinate():
    q1 = np.concatenate([np.linspace(0.5, 0.0, 30), np.zeros(30)])
    hist = np.stack([q1, 1.0 - q1], axis=1)
    ok, q_star, _ = check_assumption1(hist, window=10, tol=1e-6)
    assert not ok
    assert q_star == 0.0


def test_check_assumption1_settles_after_drift():
    drift = np.linspace(0.6, 0.3, 40)
    flat = np.full(60, 0.3)
    q1 = np.concatenate([drift, flat])
    hist = np.stack([q1, 1.0 - q1], axis=1)
    ok, q_star, t_eps = check_assumption1(hist, window=20, tol=1e-9)
    assert ok
    assert q_star == pytest.approx(0.3)
    assert 40 <= t_eps <= 60


def test_schemes_keep_simplex_over_long_runs():
    groups = GroupInfo([0] * 5 + [1])
    losses0 = np.linspace(0.0, 1.0, 6)
    for scheme in (StaticScheme("erm", "erm"), StaticScheme("iw", "iw"),
                   GroupDroScheme(0.3), CvarScheme(0.5)):
        state = scheme.init_state(groups)
        rng = np.random.default_rng(0)
        for t in range(2000):
            state = scheme.update(state, losses0 + 0.01 * rng.random(6), groups)
            _assert_simplex(state.q)


def test_parse_scheme():
    assert parse_scheme("erm").name == "erm"
    assert parse_scheme("iw").name == "iw"
    assert isinstance(parse_scheme("gdro:0.05"), GroupDroScheme)
    assert parse_scheme("gdro:0.05").nu == 0.05
    assert isinstance(parse_scheme("cvar:0.25"), CvarScheme)
    with pytest.raises(InvalidArgumentError):
        parse_scheme("dro")
    with pytest.raises(InvalidArgumentError):
        parse_scheme("cvar:1.5")


def test_group_info_validation():
    with pytest.raises(InvalidArgumentError):
        GroupInfo([0, 2])  # group 1 empty
    with pytest.raises(InvalidArgumentError):
        GroupInfo([])
    gi = GroupInfo([1, 0, 0])
    assert gi.n_groups == 2
    assert gi.sizes.tolist() == [2, 1]
