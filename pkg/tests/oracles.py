"""Independent reference computations used to freeze expected test values.

Everything here deliberately avoids the library's own code paths: binomials
come from a Pascal-triangle recurrence, logarithms from big-integer
bisection, and probabilities from explicit outcome enumeration.  Slow is
fine; independent is the point.
"""

from __future__ import annotations

from fractions import Fraction


def pascal_binomial(n: int, k: int) -> int:
    """C(n, k) via the additive recurrence, no math.comb."""
    if k < 0 or k > n:
        return 0
    row = [1]
    for _ in range(n):
        row = [1] + [row[i] + row[i + 1] for i in range(len(row) - 1)] + [1]
    return row[k]


def ball_volume(radius: int, K: int) -> int:
    return sum(pascal_binomial(K, j) for j in range(radius + 1))


def log2_fixed(x: Fraction, frac_bits: int = 64) -> Fraction:
    """log2 of a positive rational to frac_bits of precision.

    Classic shift-and-square on a fixed-point mantissa with 16 guard bits:
    normalize x to m/2^S in [1,2), then each squaring yields one output bit.
    Only integer arithmetic; the single floor per step keeps the result
    within 2^-(frac_bits+10) of the true value.  Returns a Fraction with
    denominator 2^frac_bits.
    """
    if x <= 0:
        raise ValueError("log2 needs a positive argument")
    num, den = x.numerator, x.denominator
    ipart = num.bit_length() - den.bit_length()
    if ipart >= 0:
        den <<= ipart
    else:
        num <<= -ipart
    if num < den:
        num <<= 1
        ipart -= 1
    scale = frac_bits + 16
    mant = (num << scale) // den
    frac = 0
    for _ in range(frac_bits):
        mant = (mant * mant) >> scale
        frac <<= 1
        if mant >> (scale + 1):
            frac |= 1
            mant >>= 1
    return ipart + Fraction(frac, 1 << frac_bits)


def log2_float(x: Fraction, frac_bits: int = 64) -> float:
    return float(log2_fixed(Fraction(x), frac_bits))


def wilson_upper(failures: int, trials: int, z: float = 1.959963984540054) -> float:
    """Upper end of the Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 1.0
    p = failures / trials
    z2 = z * z
    center = (p + z2 / (2 * trials)) / (1 + z2 / trials)
    half = (
        z
        * ((p * (1 - p) / trials + z2 / (4 * trials * trials)) ** 0.5)
        / (1 + z2 / trials)
    )
    return min(1.0, center + half)
