"""Sample reweighting schemes and diagnostics.

Static schemes (uniform ERM weights, group-balancing importance weights) and
dynamic ones (exponentiated-gradient group weights, worst-alpha-fraction CVaR
weights).  Every update returns weights on the probability simplex; the sum
is renormalized after each step so that drift stays below 1e-12 even over
10^7 epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError
from .linalg import as_vector


@dataclass(frozen=True)
class GroupInfo:
    """Per-sample group indices in {0, ..., K-1} with every group nonempty."""

    labels: np.ndarray
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] < 1:
            raise InvalidArgumentError("group labels must be a non-empty 1-D sequence")
        if labels.min() < 0:
            raise InvalidArgumentError("group labels must be non-negative")
        k = int(labels.max()) + 1
        sizes = np.bincount(labels, minlength=k)
        if np.any(sizes == 0):
            raise InvalidArgumentError("every group must be nonempty")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sizes", sizes)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_groups(self) -> int:
        return int(self.sizes.shape[0])


def group_means(values, groups: GroupInfo) -> np.ndarray:
    """Per-group means of a per-sample vector."""
    values = as_vector(values, "per-sample values")
    if values.shape[0] != groups.n:
        raise InvalidArgumentError("value length does not match the group labels")
    sums = np.bincount(groups.labels, weights=values, minlength=groups.n_groups)
    return sums / groups.sizes


@dataclass(frozen=True)
class WeightState:
    """Simplex weights over samples, plus group weights for Group DRO runs."""

    q: np.ndarray
    gdro_g: np.ndarray | None = None
    step: int = 0


def _renormalized(q: np.ndarray) -> np.ndarray:
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise InvalidArgumentError("weights must be finite and non-negative")
    total = q.sum()
    if total <= 0:
        raise InvalidArgumentError("weights must have positive mass")
    return q / total


def erm_weights(n: int) -> WeightState:
    """Uniform weights 1/n."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    return WeightState(q=np.full(n, 1.0 / n))


def iw_weights(groups: GroupInfo) -> WeightState:
    """Importance weights 1/(K * n_k): every group carries the same total mass."""
    q = 1.0 / (groups.n_groups * groups.sizes[groups.labels])
    return WeightState(q=_renormalized(q))


def gdro_init(groups: GroupInfo) -> WeightState:
    """Starting state for Group DRO: uniform group weights."""
    g = np.full(groups.n_groups, 1.0 / groups.n_groups)
    return WeightState(q=_group_to_sample(g, groups), gdro_g=g)


def _group_to_sample(g: np.ndarray, groups: GroupInfo) -> np.ndarray:
    q = g[groups.labels] / groups.sizes[groups.labels]
    return _renormalized(q)


def _gdro_core(g: np.ndarray, risks: np.ndarray, nu: float, groups: GroupInfo) -> tuple[np.ndarray, np.ndarray]:
    # Subtracting the largest exponent makes the update exactly invariant to
    # adding a constant to all group risks.
    logits = np.log(g) + nu * risks
    logits -= logits.max()
    new_g = np.exp(logits)
    new_g /= new_g.sum()
    q = new_g[groups.labels] / groups.sizes[groups.labels]
    q /= q.sum()
    return q, new_g


def gdro_step(state: WeightState, group_risks, nu: float, groups: GroupInfo) -> WeightState:
    """One exponentiated-gradient update of the group weights.

    g_k <- g_k * exp(nu * risk_k), renormalized onto the simplex, and the
    sample weights become q_i = g_k / n_k for sample i in group k.
    """
    if not (nu > 0):
        raise InvalidArgumentError("nu must be positive")
    risks = as_vector(group_risks, "group risks")
    if risks.shape[0] != groups.n_groups:
        raise InvalidArgumentError("group risk length does not match the number of groups")
    g = state.gdro_g
    if g is None:
        raise InvalidArgumentError("state has no group weights; initialize with gdro_init")
    q, new_g = _gdro_core(g, risks, nu, groups)
    return WeightState(q=q, gdro_g=new_g, step=state.step + 1)


def cvar_weights(per_sample_losses, alpha: float) -> WeightState:
    """Uniform weight on the ceil(alpha*n) largest losses, zero elsewhere.

    Ties at the cutoff are broken toward the lowest sample index, which keeps
    golden traces deterministic.
    """
    losses = as_vector(per_sample_losses, "per-sample losses")
    if not (0.0 < alpha <= 1.0):
        raise InvalidArgumentError("alpha must be in (0, 1]")
    n = losses.shape[0]
    m = int(np.ceil(alpha * n))
    # Stable sort on -losses keeps the original order among equal losses.
    order = np.argsort(-losses, kind="stable")
    q = np.zeros(n)
    q[order[:m]] = 1.0 / m
    return WeightState(q=_renormalized(q))


def check_assumption1(weight_history, window: int = 1000, tol: float = 1e-4):
    """Diagnose whether the weights have settled at a strictly positive point.

    Over the trailing ``window`` steps, the per-coordinate oscillation
    (max minus min) must stay within ``tol`` and the trailing mean must have a
    strictly positive minimum coordinate.  Returns (satisfied, q_star, t_eps)
    where q_star is that minimum and t_eps is the first history step such
    that every window ending at or after it oscillates at most ``tol``
    (0 when every window is settled, len(history) when the last one is not).
    """
    hist = np.asarray(weight_history, dtype=np.float64)
    if hist.ndim != 2 or hist.shape[0] < window:
        raise InvalidArgumentError(
            f"need a 2-D history with at least window={window} rows, got shape {hist.shape}"
        )
    steps = hist.shape[0]
    osc = np.empty(steps - window + 1)
    for end in range(window - 1, steps):
        block = hist[end - window + 1 : end + 1]
        osc[end - window + 1] = float((block.max(axis=0) - block.min(axis=0)).max())
    tail_mean = hist[-window:].mean(axis=0)
    q_star = max(float(tail_mean.min()), 0.0)
    settled = osc <= tol
    satisfied = bool(settled[-1]) and q_star > 0.0
    if np.all(settled):
        t_eps = 0
    elif bool(settled[-1]):
        t_eps = int(np.nonzero(~settled)[0][-1] + window)
    else:
        t_eps = steps
    return satisfied, q_star, t_eps


class StaticScheme:
    """Weights fixed for the whole run (ERM or importance weighting)."""

    def __init__(self, name: str, kind: str):
        self.name = name
        self._kind = kind

    def init_state(self, groups: GroupInfo) -> WeightState:
        if self._kind == "erm":
            return erm_weights(groups.n)
        return iw_weights(groups)

    def update(self, state: WeightState, per_sample_losses, groups: GroupInfo) -> WeightState:
        return replace(state, step=state.step + 1)


class GroupDroScheme:
    """Exponentiated-gradient group weights recomputed from full-batch risks."""

    def __init__(self, nu: float):
        if not (nu > 0):
            raise InvalidArgumentError("nu must be positive")
        self.nu = nu
        self.name = f"gdro:{nu:g}"

    def init_state(self, groups: GroupInfo) -> WeightState:
        return gdro_init(groups)

    def update(self, state: WeightState, per_sample_losses, groups: GroupInfo) -> WeightState:
        # Hot path of the training loop: same arithmetic as
        # gdro_step(group_means(...)) without the argument re-validation.
        sums = np.bincount(groups.labels, weights=per_sample_losses, minlength=groups.n_groups)
        risks = sums / groups.sizes
        if not np.all(np.isfinite(risks)):
            raise InvalidArgumentError("non-finite group risk")
        q, new_g = _gdro_core(state.gdro_g, risks, self.nu, groups)
        return WeightState(q=q, gdro_g=new_g, step=state.step + 1)


class CvarScheme:
    """Uniform weight on the worst alpha-fraction of sample losses each epoch."""

    def __init__(self, alpha: float):
        if not (0.0 < alpha <= 1.0):
            raise InvalidArgumentError("alpha must be in (0, 1]")
        self.alpha = alpha
        self.name = f"cvar:{alpha:g}"

    def init_state(self, groups: GroupInfo) -> WeightState:
        return erm_weights(groups.n)

    def update(self, state: WeightState, per_sample_losses, groups: GroupInfo) -> WeightState:
        new = cvar_weights(per_sample_losses, self.alpha)
        return replace(new, step=state.step + 1)


def parse_scheme(text: str):
    """Parse "erm", "iw", "gdro:<nu>" or "cvar:<alpha>"."""
    parts = text.strip().lower().split(":")
    if parts[0] == "erm" and len(parts) == 1:
        return StaticScheme("erm", "erm")
    if parts[0] == "iw" and len(parts) == 1:
        return StaticScheme("iw", "iw")
    if parts[0] == "gdro" and len(parts) == 2:
        return GroupDroScheme(float(parts[1]))
    if parts[0] == "cvar" and len(parts) == 2:
        return CvarScheme(float(parts[1]))
    raise InvalidArgumentError(f"unknown scheme spec: {text!r}")
