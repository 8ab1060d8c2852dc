"""Scalar losses and their derivatives in the prediction.

Three families: squared error for regression, the canonical logistic loss and
a polynomially-tailed classification loss whose right tail decays like a
power law instead of an exponential.  All functions are vectorized over
``yhat``/``y`` and stateless.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class Squared:
    """loss(yhat, y) = (yhat - y)^2 / 2."""


@dataclass(frozen=True)
class Logistic:
    """loss(yhat, y) = log(1 + exp(-yhat * y)) with labels y in {-1, +1}."""


@dataclass(frozen=True)
class PolyTailed:
    """Power-law-tailed classification loss with labels in {-1, +1}.

    For margin m = yhat * y:
      m >= beta: 1 / (m - (beta - 1))**alpha
      m <  beta: logistic(m) shifted by (1 - log(1 + exp(-beta))) so that the
                 two branches meet continuously at m = beta.

    The shift gives C0 continuity only; the derivative jumps at beta.
    """

    alpha: float
    beta: float = 0.0

    def __post_init__(self):
        if not (self.alpha > 0):
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha}")
        if not np.isfinite(self.alpha) or not np.isfinite(self.beta):
            raise InvalidArgumentError("alpha and beta must be finite")


LossKind = Union[Squared, Logistic, PolyTailed]


def parse_loss(text: str) -> LossKind:
    """Parse "squared", "logistic" or "polytailed:<alpha>:<beta>"."""
    parts = text.strip().lower().split(":")
    if parts[0] == "squared" and len(parts) == 1:
        return Squared()
    if parts[0] == "logistic" and len(parts) == 1:
        return Logistic()
    if parts[0] == "polytailed" and len(parts) == 3:
        return PolyTailed(alpha=float(parts[1]), beta=float(parts[2]))
    raise InvalidArgumentError(f"unknown loss spec: {text!r}")


def loss_name(kind: LossKind) -> str:
    if isinstance(kind, Squared):
        return "squared"
    if isinstance(kind, Logistic):
        return "logistic"
    return f"polytailed:{kind.alpha:g}:{kind.beta:g}"


def _require_labels(y: np.ndarray) -> None:
    if not np.all(np.abs(y) == 1.0):
        raise InvalidArgumentError("classification labels must be exactly -1 or +1")


def _logistic_value(m: np.ndarray) -> np.ndarray:
    # log(1 + exp(-m)) = log1p(exp(-|m|)) + max(0, -m); stable for |m| up to 1e6+.
    return np.log1p(np.exp(-np.abs(m))) + np.maximum(0.0, -m)


def loss_value(kind: LossKind, yhat, y):
    """Pointwise loss; scalar in, scalar out; arrays broadcast elementwise."""
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if isinstance(kind, Squared):
        out = 0.5 * (yhat - y) ** 2
    else:
        _require_labels(y)
        m = yhat * y
        if isinstance(kind, Logistic):
            out = _logistic_value(m)
        else:
            shift = 1.0 - _logistic_value(np.asarray(kind.beta))
            left = _logistic_value(m) + shift
            right = np.power(np.maximum(m - (kind.beta - 1.0), 1.0), -kind.alpha)
            out = np.where(m < kind.beta, left, right)
    return out if out.ndim else float(out)


def loss_grad(kind: LossKind, yhat, y):
    """Derivative of loss_value with respect to yhat."""
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if isinstance(kind, Squared):
        out = yhat - y
    else:
        _require_labels(y)
        m = yhat * y
        if isinstance(kind, Logistic):
            out = -y * expit(-m)
        else:
            left = -y * expit(-m)
            base = np.maximum(m - (kind.beta - 1.0), 1.0)
            right = -y * kind.alpha * np.power(base, -(kind.alpha + 1.0))
            out = np.where(m < kind.beta, left, right)
    return out if out.ndim else float(out)
