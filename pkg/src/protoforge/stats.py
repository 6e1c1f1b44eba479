"""Distribution toolkit: statistical distance, entropy, KL, counting checks,
and Chernoff-based estimation.

Exact distributions carry Fraction masses and all comparisons on them are
bit-exact.  Entropy and KL are transcendental, so in exact mode they are
evaluated with 256-bit mpmath floats; the accumulated error over a support of
size 2^k is far below 2^-200, which is the documented error budget
(PRECISION_BUDGET below).  Logarithms are base 2 throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import mpmath

from .errors import (
    AbsoluteContinuityViolated,
    CapExceeded,
    SupportMismatch,
)

#: Working precision for exact-mode entropy/KL, in bits.
ENTROPY_PRECISION_BITS = 256

#: Documented absolute error budget for exact-mode entropy/KL values.
PRECISION_BUDGET = mpmath.mpf(2) ** -200


@dataclass(frozen=True)
class Distribution:
    """A probability distribution over k-bit strings (encoded as ints).

    ``kind`` is "exact" (Fraction masses summing to exactly 1) or
    "empirical" (float masses from ``samples`` runs).  Elements with zero
    mass may be omitted from ``mass``.
    """

    width: int
    mass: Mapping[int, Fraction | float]
    kind: str = "exact"
    samples: int | None = None

    def __post_init__(self):
        if self.kind not in ("exact", "empirical"):
            raise ValueError(f"unknown kind {self.kind!r}")
        for z in self.mass:
            if not (0 <= z < (1 << self.width)):
                raise ValueError(f"element {z} exceeds width {self.width}")
        if self.kind == "exact":
            total = sum(self.mass.values(), Fraction(0))
            if total != 1:
                raise ValueError(f"exact masses sum to {total}, not 1")

    def prob(self, z: int) -> Fraction | float:
        return self.mass.get(z, Fraction(0) if self.kind == "exact" else 0.0)

    def mass_of_set(self, M: Iterable[int]) -> Fraction | float:
        zero = Fraction(0) if self.kind == "exact" else 0.0
        return sum((self.prob(z) for z in set(M)), zero)

    def support(self) -> list[int]:
        return sorted(z for z, p in self.mass.items() if p > 0)

    @staticmethod
    def point_mass(width: int, z: int) -> "Distribution":
        return Distribution(width, {z: Fraction(1)}, "exact")

    @staticmethod
    def uniform(width: int) -> "Distribution":
        p = Fraction(1, 1 << width)
        return Distribution(width, {z: p for z in range(1 << width)}, "exact")

    @staticmethod
    def from_counts(width: int, counts: Mapping[int, int], kind: str = "exact",
                    total: int | None = None) -> "Distribution":
        tot = total if total is not None else sum(counts.values())
        if kind == "exact":
            mass = {z: Fraction(c, tot) for z, c in sorted(counts.items()) if c}
            return Distribution(width, mass, "exact")
        mass_f = {z: c / tot for z, c in sorted(counts.items()) if c}
        return Distribution(width, mass_f, "empirical", samples=tot)


def _check_same_support(a: Distribution, b: Distribution) -> None:
    if a.width != b.width:
        raise SupportMismatch(f"widths differ: {a.width} vs {b.width}")


def statistical_distance(a: Distribution, b: Distribution) -> Fraction | float:
    """Half the L1 distance between the mass functions; exact when both exact."""
    _check_same_support(a, b)
    keys = set(a.mass) | set(b.mass)
    if a.kind == "exact" and b.kind == "exact":
        return sum((abs(a.prob(z) - b.prob(z)) for z in keys), Fraction(0)) / 2
    return sum(abs(float(a.prob(z)) - float(b.prob(z))) for z in keys) / 2


def _masses_for_log(a: Distribution) -> list[mpmath.mpf]:
    vals = []
    for p in a.mass.values():
        if p == 0:
            continue
        if isinstance(p, Fraction):
            vals.append(mpmath.mpf(p.numerator) / mpmath.mpf(p.denominator))
        else:
            vals.append(mpmath.mpf(p))
    return vals


def entropy(a: Distribution) -> mpmath.mpf:
    """Shannon entropy in bits, with 0*log(1/0) taken as 0."""
    with mpmath.workprec(ENTROPY_PRECISION_BITS):
        h = mpmath.mpf(0)
        for p in _masses_for_log(a):
            h -= p * mpmath.log(p, 2)
        return h


def kl_divergence(a: Distribution, b: Distribution) -> mpmath.mpf:
    """KL divergence D(a || b) in bits; requires b > 0 wherever a > 0."""
    _check_same_support(a, b)
    with mpmath.workprec(ENTROPY_PRECISION_BITS):
        total = mpmath.mpf(0)
        for z, p in a.mass.items():
            if p == 0:
                continue
            q = b.prob(z)
            if q == 0:
                raise AbsoluteContinuityViolated(f"b({z}) = 0 but a({z}) = {p}")
            if isinstance(p, Fraction) and isinstance(q, Fraction):
                ratio = mpmath.mpf((p / q).numerator) / mpmath.mpf((p / q).denominator)
                pm = mpmath.mpf(p.numerator) / mpmath.mpf(p.denominator)
            else:
                pm = mpmath.mpf(float(p))
                ratio = pm / mpmath.mpf(float(q))
            total += pm * mpmath.log(ratio, 2)
        return total


@dataclass(frozen=True)
class PinskerReport:
    """Outcome of the entropy-deficit to statistical-distance bound check."""

    eps_hat: mpmath.mpf          # k - entropy, clamped at 0
    sd_uniform: Fraction         # exact SD to the uniform distribution
    bound: mpmath.mpf            # sqrt(eps_hat / 2)
    holds: bool


def pinsker_check(a: Distribution) -> PinskerReport:
    """Check SD(a, uniform_k) <= sqrt((k - entropy(a)) / 2) for an exact a.

    This is a theorem (via Pinsker's inequality and sqrt(ln2/2) < sqrt(1/2)),
    so ``holds`` is expected True for every input; a False is a bug either
    here or in the caller's distribution.  Comparisons allow the documented
    2^-200 budget so that boundary cases (e.g. exactly uniform) cannot flip
    on rounding.
    """
    if a.kind != "exact":
        raise ValueError("pinsker_check requires an exact distribution")
    with mpmath.workprec(ENTROPY_PRECISION_BITS):
        h = entropy(a)
        eps_hat = mpmath.mpf(a.width) - h
        if eps_hat < 0:
            # entropy <= k is a theorem; a tiny negative is rounding noise.
            eps_hat = mpmath.mpf(0)
        sd = statistical_distance(a, Distribution.uniform(a.width))
        bound = mpmath.sqrt(eps_hat / 2)
        sd_mp = mpmath.mpf(sd.numerator) / mpmath.mpf(sd.denominator)
        holds = bool(sd_mp <= bound + PRECISION_BUDGET)
        return PinskerReport(eps_hat=eps_hat, sd_uniform=sd, bound=bound, holds=holds)


# ---------------------------------------------------------------------------
# Counting claim: for f: U -> [M], alpha_i = Pr[f(u) = i], then
# E[alpha_f(u)] >= 1/M and Pr[alpha_f(u) >= eps/M] >= 1 - eps.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountingClaimReport:
    u_size: int
    M: int
    eps_grid: tuple[Fraction, ...]
    functions_checked: int
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def claim_prob_verify(u_size: int, M: int, eps_grid: Sequence[Fraction | float | str],
                      cap: int = 2**22) -> CountingClaimReport:
    """Exhaustively verify the counting claim over all functions U -> [M].

    All arithmetic is exact rationals; any violation (expected: none) is
    reported with the offending function.
    """
    count = M ** u_size
    if count > cap:
        raise CapExceeded(count, cap, "function enumeration")
    grid = tuple(Fraction(e) if not isinstance(e, Fraction) else e for e in eps_grid)
    violations: list[str] = []
    inv_u = Fraction(1, u_size)
    for f in itertools.product(range(M), repeat=u_size):
        alpha = [Fraction(0)] * M
        for i in f:
            alpha[i] += inv_u
        expectation = sum((alpha[i] ** 2 for i in range(M)), Fraction(0))
        if expectation < Fraction(1, M):
            violations.append(f"f={f}: E[alpha] = {expectation} < 1/{M}")
        for eps in grid:
            hit = sum((inv_u for i in f if alpha[i] >= eps / M), Fraction(0))
            if hit < 1 - eps:
                violations.append(f"f={f}, eps={eps}: Pr = {hit} < {1 - eps}")
    return CountingClaimReport(u_size, M, grid, count, tuple(violations))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleConfig:
    """Sample count B and deviation target gamma.

    The two-sided deviation bound is exp(-gamma^2 * B / 3) per side.
    """

    B: int
    gamma: float = 0.01

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B >= 1 required")

    @property
    def bound(self) -> float:
        return math.exp(-(self.gamma ** 2) * self.B / 3)


@dataclass(frozen=True)
class ChernoffEstimate:
    p_hat: float
    gamma: float
    bound: float
    B: int


def chernoff_estimate(sampler: Callable[[int], int], z: int,
                      cfg: SampleConfig) -> ChernoffEstimate:
    """Estimate Pr[sampler output = z] from B independent runs.

    ``sampler`` maps a run index to an m-bit output; seeding is the caller's
    responsibility (pass a closure over a derived seed).
    """
    hits = sum(1 for i in range(cfg.B) if sampler(i) == z)
    return ChernoffEstimate(p_hat=hits / cfg.B, gamma=cfg.gamma,
                            bound=cfg.bound, B=cfg.B)


def empirical_distribution(sampler: Callable[[int], int], width: int, B: int) -> Distribution:
    """Empirical output distribution from B independent runs of the sampler."""
    counts: dict[int, int] = {}
    for i in range(B):
        z = sampler(i)
        counts[z] = counts.get(z, 0) + 1
    return Distribution.from_counts(width, counts, kind="empirical", total=B)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def distribution_to_json(a: Distribution) -> dict:
    """JSON form: {width, kind, entries: [[element-hex, numerator, log2-denominator]]}.

    Masses must be dyadic rationals.  Exact framework distributions are
    dyadic by construction (denominators divide a power of two); empirical
    float masses are dyadic because binary floats are.
    """
    entries = []
    for z in sorted(a.mass):
        p = a.mass[z]
        frac = p if isinstance(p, Fraction) else Fraction(*float(p).as_integer_ratio())
        den = frac.denominator
        log2den = den.bit_length() - 1
        if (1 << log2den) != den:
            raise ValueError(f"mass {p} at {z:#x} is not a dyadic rational")
        entries.append([format(z, "x"), frac.numerator, log2den])
    out = {"width": a.width, "kind": a.kind, "entries": entries}
    if a.samples is not None:
        out["samples"] = a.samples
    return out


def distribution_from_json(obj: dict) -> Distribution:
    kind = obj["kind"]
    mass: dict[int, Fraction | float] = {}
    for z_hex, num, log2den in obj["entries"]:
        z = int(z_hex, 16)
        frac = Fraction(num, 1 << log2den)
        mass[z] = frac if kind == "exact" else float(frac)
    return Distribution(width=obj["width"], mass=mass, kind=kind,
                        samples=obj.get("samples"))
