"""Information-theoretic storage lower bounds and gap analysis.

Every quantity is assembled from exact big integers (ball volumes, binomial
and factorial counts, rational error budgets) and only converted through a
128-bit-precision base-2 logarithm at the end, so comparisons against
measured costs are not noise-limited.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb, factorial

from mpmath import mp, mpf

from .model import hamming_ball_volume


def log2_exact(x: int | Fraction) -> float:
    """Base-2 log of a positive integer or Fraction via 128-bit arithmetic."""
    if isinstance(x, Fraction):
        num, den = x.numerator, x.denominator
    else:
        num, den = x, 1
    if num <= 0 or den <= 0:
        raise ValueError("log2_exact needs a positive argument")
    with mp.workprec(128):
        return float(mp.log(mpf(num), 2) - mp.log(mpf(den), 2))


@dataclass(frozen=True)
class BoundParams:
    """Parameter point for the converse bounds.

    epsilon is the allowed decoding-failure probability; the counting
    argument behind the general bound needs epsilon strictly below
    2^-(nu*n), and 0 is accepted as the errorless specialization.
    """

    n: int
    c: int
    nu: int
    K: int
    radius: int
    epsilon: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        if not 1 <= self.c <= self.n:
            raise ValueError("need 1 <= c <= n")
        if self.nu < 1 or self.K < 1 or self.radius < 0:
            raise ValueError("nu, K must be >= 1 and radius >= 0")
        eps = Fraction(self.epsilon)
        object.__setattr__(self, "epsilon", eps)
        if eps < 0 or eps >= Fraction(1, 2 ** (self.nu * self.n)):
            raise ValueError(
                "epsilon must lie in [0, 2^-(nu*n)) for the bound to hold"
            )

    @property
    def ball_volume(self) -> int:
        return hamming_ball_volume(min(self.radius, self.K), self.K)

    @property
    def survival(self) -> Fraction:
        """1 - epsilon * 2^(nu*n), the surviving share of the tuple space."""
        return 1 - self.epsilon * 2 ** (self.nu * self.n)


def lower_bound_general(params: BoundParams) -> float:
    """Per-server bits any valid code needs, for any number of versions.

    (K + (nu-1) log2 Vol + log2(survival) - log2(C(c+nu-1, nu) * nu!))
    divided by (c + nu - 1).
    """
    share = params.c + params.nu - 1
    arrangements = comb(share, params.nu) * factorial(params.nu)
    total = (
        params.K
        + (params.nu - 1) * log2_exact(params.ball_volume)
        + log2_exact(params.survival)
        - log2_exact(arrangements)
    )
    return total / share


def lower_bound_two_versions(params: BoundParams) -> float:
    """Sharper constant available when exactly two versions circulate."""
    if params.nu != 2:
        raise ValueError("this bound is specific to nu = 2")
    share = params.c + 1
    total = (
        params.K
        + log2_exact(params.ball_volume)
        + log2_exact(params.survival)
        - log2_exact(params.c)
    )
    return total / share


def gap_factor(params: BoundParams, scheme_cost: float) -> float:
    """How far above the converse a scheme's worst-case cost sits."""
    bound = lower_bound_general(params)
    if bound <= 0:
        raise ValueError("gap factor undefined for a nonpositive bound")
    return scheme_cost / bound
