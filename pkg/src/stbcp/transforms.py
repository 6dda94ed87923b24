"""Score transformations h(s; D, X).

A transform only sees the data through the threshold ``w = w(D, X)`` and,
for the oracle transform, the tail mass ``p = P(S(X, Y) >= w | D, X)``.
All transforms are vectorised over numpy arrays and broadcast ``s``, ``w``
and ``p`` against each other.

At an infinite threshold (budget = |Y|) every step transform sends finite
scores to 0; asking for ``h(w)`` itself at ``w = inf`` raises
:class:`InfiniteThreshold`, since that case is handled upstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import InfiniteThreshold, MissingOracle, ZeroDenominator


def _guard_infinite(s, w) -> None:
    if np.any(np.isinf(w) & (s >= w)):
        raise InfiniteThreshold("h(w) requested at w = +inf; budget |Y| must be special-cased")


class Transform:
    """Base class.  Subclasses implement ``_apply``."""

    name: str = "transform"
    #: whether h depends on (D, X) through w at all
    uses_threshold: bool = True
    needs_oracle: bool = False

    def __call__(self, s, w, p=None) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.uses_threshold:
            _guard_infinite(s, w)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = self._apply(s, w, p)
        return np.asarray(out, dtype=float)

    def _apply(self, s, w, p):
        raise NotImplementedError

    def __repr__(self) -> str:
        return self.name


class Identity(Transform):
    name = "identity"
    uses_threshold = False

    def _apply(self, s, w, p):
        return np.broadcast_to(s, np.broadcast_shapes(s.shape, w.shape)).copy()


@dataclass(frozen=True, repr=False)
class Monotone(Transform):
    """A fixed strictly increasing map of the score, e.g. ``s**2``.

    Used to exercise prediction-set invariance; it ignores (D, X).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    label: str = "monotone"
    uses_threshold = False

    @property
    def name(self) -> str:  # type: ignore[override]
        return self.label

    def _apply(self, s, w, p):
        s = np.broadcast_to(s, np.broadcast_shapes(s.shape, w.shape))
        return self.fn(s)


class IW(Transform):
    """w * 1(s >= w): the improvement operator applied to the identity."""

    name = "iw"

    def _apply(self, s, w, p):
        return np.where(s >= w, w, 0.0)


class IRo(Transform):
    """1(s >= w): the robust variant with h(w) = 1."""

    name = "iro"

    def _apply(self, s, w, p):
        return np.where(s >= w, 1.0, 0.0)


@dataclass(frozen=True, repr=False)
class IWEps(Transform):
    """Strictly increasing approximation of IW within sup-distance ``eps``.

    Below w the score is mapped to ``(eps / w) * s``; from w upwards to
    ``w - eps / (s - w + 1)``.  Non-negative whenever ``eps <= w``.
    """

    eps: float

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")

    @property
    def name(self) -> str:  # type: ignore[override]
        return f"iw_eps:{self.eps!r}"

    def _apply(self, s, w, p):
        below = (self.eps / w) * s
        above = w - self.eps / (s - w + 1.0)
        return np.where(s >= w, above, below)


@dataclass(frozen=True, repr=False)
class OptimalOracle(Transform):
    """a * 1(s >= w) / sqrt(p), with p the exact tail mass at w.

    Needs the true conditional label law, so it only runs on synthetic data.
    """

    a: float = 1.0
    needs_oracle = True

    @property
    def name(self) -> str:  # type: ignore[override]
        return "optimal_oracle" if self.a == 1.0 else f"optimal_oracle(a={self.a!r})"

    def _apply(self, s, w, p):
        if p is None:
            raise MissingOracle("optimal_oracle needs p(D, X)")
        p = np.asarray(p, dtype=float)
        hit = s >= w
        if np.any(hit & (p <= 0)):
            raise MissingOracle("p(D, X) must be positive wherever s >= w")
        return np.where(hit, self.a / np.sqrt(p), 0.0)


@dataclass(frozen=True, repr=False)
class Improved(Transform):
    """G(h): s -> h(w) * 1(s >= w)."""

    base: Transform

    @property
    def name(self) -> str:  # type: ignore[override]
        return f"G({self.base.name})"

    @property
    def needs_oracle(self) -> bool:  # type: ignore[override]
        return self.base.needs_oracle

    def _apply(self, s, w, p):
        hw = self.base(w, w, p)
        return np.where(s >= w, hw, 0.0)


def improve(t: Transform) -> Transform:
    """Apply the improvement operator G.  G(identity) is IW and G is idempotent."""
    return Improved(t)


def parse_transform(spec: str) -> Transform:
    """Parse ``identity | iw | iro | iw_eps:<eps> | optimal_oracle``."""
    s = spec.strip().lower()
    if s == "identity":
        return Identity()
    if s == "iw":
        return IW()
    if s == "iro":
        return IRo()
    if s == "optimal_oracle":
        return OptimalOracle()
    if s.startswith("iw_eps:"):
        try:
            eps = float(s.split(":", 1)[1])
        except ValueError as exc:
            raise ValueError(f"bad epsilon in {spec!r}") from exc
        return IWEps(eps)
    raise ValueError(f"unknown transform {spec!r}")


# -- objective functional ----------------------------------------------------

class ObjectiveDraws(NamedTuple):
    """Independent draws for the product-form objective.

    ``s, w, p``: calibration-side score, threshold and tail mass.
    ``w_test, p_test``: independent test-side threshold and tail mass.
    """

    s: np.ndarray
    w: np.ndarray
    p: np.ndarray
    w_test: np.ndarray
    p_test: np.ndarray


def objective_j(
    t: Transform,
    sampler: Callable[[np.random.Generator, int], ObjectiveDraws],
    num_draws: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte-Carlo estimate of E[h_i] * E[1 / h(w_{n+1})] and its standard error.

    The standard error is the delta-method one for a product of two
    independent sample means.
    """
    d = sampler(rng, num_draws)
    h_cal = t(d.s, d.w, d.p)
    h_w = t(d.w_test, d.w_test, d.p_test)
    zero = np.flatnonzero(h_w <= 0)
    if zero.size:
        raise ZeroDenominator(f"{t.name}: h(w_test) = 0 on draw {int(zero[0])}")
    inv = 1.0 / h_w
    a, b = float(h_cal.mean()), float(inv.mean())
    n = h_cal.size
    var = b**2 * h_cal.var(ddof=1) / n + a**2 * inv.var(ddof=1) / inv.size
    return a * b, math.sqrt(var)
