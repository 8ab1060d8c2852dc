import math

import numpy as np
import pytest

from grwlab.errors import InvalidArgumentError
from grwlab.losses import (
    Logistic,
    PolyTailed,
    Squared,
    loss_grad,
    loss_name,
    loss_value,
    parse_loss,
)

ALL_KINDS = [Squared(), Logistic(), PolyTailed(1.0, 0.0), PolyTailed(2.0, 0.5), PolyTailed(0.5, -1.0)]


def test_squared_values():
    assert loss_value(Squared(), 3.0, 1.0) == 2.0
    assert loss_grad(Squared(), 3.0, 1.0) == 2.0


def test_logistic_at_zero():
    assert loss_value(Logistic(), 0.0, 1.0) == pytest.approx(math.log(2.0), abs=1e-15)
    assert loss_grad(Logistic(), 0.0, 1.0) == -0.5


def test_polytailed_right_branch_value():
    # alpha=1, beta=0, margin 1: 1 / (1 - (0 - 1)) = 1/2.
    assert loss_value(PolyTailed(1.0, 0.0), 1.0, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_polytailed_continuous_at_beta():
    assert loss_value(PolyTailed(1.0, 0.0), 0.0, 1.0) == pytest.approx(1.0, abs=1e-15)
    for alpha in (0.5, 1.0, 2.0, 3.5):
        for beta in (-2.0, -0.5, 0.0, 0.7, 2.0):
            kind = PolyTailed(alpha, beta)
            below = loss_value(kind, beta - 1e-13, 1.0)
            above = loss_value(kind, beta + 1e-13, 1.0)
            assert below == pytest.approx(above, abs=1e-12)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_grad_matches_central_differences(kind):
    rng = np.random.default_rng(123)
    h = 1e-6
    for _ in range(1000):
        yhat = float(rng.uniform(-8, 8))
        y = float(rng.uniform(-2, 2)) if isinstance(kind, Squared) else float(rng.choice([-1.0, 1.0]))
        g = loss_grad(kind, yhat, y)
        fd = (loss_value(kind, yhat + h, y) - loss_value(kind, yhat - h, y)) / (2 * h)
        assert g == pytest.approx(fd, rel=1e-6, abs=2e-6)


@pytest.mark.parametrize("kind", [Logistic(), PolyTailed(1.0, 0.0), PolyTailed(2.0, 1.0)])
def test_classification_losses_decrease_to_zero_in_margin(kind):
    margins = np.linspace(-20.0, 40.0, 601)
    values = loss_value(kind, margins, np.ones_like(margins))
    assert np.all(np.diff(values) < 0)
    far = loss_value(kind, 1e6, 1.0)
    assert far >= 0.0
    assert far < 1e-5


def test_logistic_smoothness_bound():
    # Second difference bounded by the curvature cap 1/4 for unit labels.
    margins = np.linspace(-30.0, 30.0, 2001)
    h = margins[1] - margins[0]
    vals = loss_value(Logistic(), margins, np.ones_like(margins))
    second = np.diff(vals, 2) / h**2
    assert np.all(np.abs(second) <= 0.25 + 1e-9)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_no_overflow_for_huge_predictions(kind):
    y = 1.0 if not isinstance(kind, Squared) else 0.5
    for yhat in (-1e6, -1e3, 0.0, 1e3, 1e6):
        v = loss_value(kind, yhat, y)
        g = loss_grad(kind, yhat, y)
        assert np.isfinite(v) and v >= 0.0
        assert np.isfinite(g)


def test_values_nonnegative_everywhere():
    rng = np.random.default_rng(5)
    for kind in ALL_KINDS:
        yhat = rng.uniform(-50, 50, size=200)
        y = np.where(rng.random(200) < 0.5, -1.0, 1.0) if not isinstance(kind, Squared) else rng.uniform(-3, 3, 200)
        assert np.all(loss_value(kind, yhat, y) >= 0.0)


def test_label_validation():
    with pytest.raises(InvalidArgumentError):
        loss_value(Logistic(), 0.3, 0.5)
    with pytest.raises(InvalidArgumentError):
        loss_grad(PolyTailed(1.0, 0.0), 0.3, 0.0)


def test_polytailed_requires_positive_alpha():
    with pytest.raises(InvalidArgumentError):
        PolyTailed(0.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        PolyTailed(-1.0, 0.0)


def test_parse_loss_round_trip():
    assert parse_loss("squared") == Squared()
    assert parse_loss("logistic") == Logistic()
    assert parse_loss("polytailed:1:0") == PolyTailed(1.0, 0.0)
    assert parse_loss("polytailed:2.5:-0.5") == PolyTailed(2.5, -0.5)
    assert loss_name(parse_loss("polytailed:1:0")) == "polytailed:1:0"
    with pytest.raises(InvalidArgumentError):
        parse_loss("hinge")
    with pytest.raises(InvalidArgumentError):
        parse_loss("polytailed:1")


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(8)
    yhat = rng.uniform(-3, 3, size=17)
    y = np.where(rng.random(17) < 0.5, -1.0, 1.0)
    for kind in (Logistic(), PolyTailed(1.5, 0.2)):
        vec = loss_value(kind, yhat, y)
        for i in range(17):
            assert vec[i] == loss_value(kind, float(yhat[i]), float(y[i]))
