"""Conversion of general no-private-input protocols into public-coin form.

A general protocol lets party j's round-i message be an arbitrary function
f(i, j, prior rounds, r_j) of the transcript so far and the party's private
randomness r_j.  The transform replaces every message with a uniformly
random permutation of all 2^ell_r randomness strings (encoded as their
concatenation, first candidate in the lowest bits); decoding picks, per
slot, the first listed string that correctly replays the party's earlier
messages, reconstructs the virtual message, and applies the original output
map.  The output distribution and round count are preserved exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

from .core import (
    ProtocolParams,
    ProtocolSpec,
    Transcript,
    TranscriptEntry,
    _as_seed,
)
from .errors import CapExceeded
from .stats import Distribution

#: Decoding is exponential in ell_r by construction; transformed messages
#: have 2^ell_r * ell_r bits.
DEFAULT_ELLR_CAP = 8


@dataclass(frozen=True)
class GeneralProtocolSpec:
    """A protocol whose messages may depend on prior rounds and private coins.

    ``message_fn(i, j, prior, r)`` must be deterministic, where ``prior`` is
    the transcript of rounds strictly before i and r is the party's private
    randomness of ``randomness_bits`` bits (the maximum any party uses).
    """

    params: ProtocolParams
    randomness_bits: int
    message_fn: Callable[[int, int, Transcript, int], int]
    output_map: Callable[[Transcript], int]
    label: str = "general"


def run_general_honest(g: GeneralProtocolSpec, seed) -> tuple[Transcript, int]:
    """Honest run of the general protocol: sample each party's coins once,
    then evaluate the message functions round by round."""
    seed = _as_seed(seed)
    coins = [seed.bits(g.randomness_bits, "coins", j) for j in range(1, g.params.n + 1)]
    trans = _virtual_transcript(g, coins)
    return trans, g.output_map(trans)


def _virtual_transcript(g: GeneralProtocolSpec, coins: list[int]) -> Transcript:
    entries: list[TranscriptEntry] = []
    for i in range(1, g.params.d + 1):
        prior = Transcript(tuple(entries))
        for j in range(1, g.params.n + 1):
            entries.append(TranscriptEntry(i, j, g.message_fn(i, j, prior, coins[j - 1]), False))
    return Transcript(tuple(entries))


def general_honest_outputs(g: GeneralProtocolSpec, cap: int = 2**22) -> Distribution:
    """Exact honest output distribution by enumerating all coin vectors."""
    space = (1 << g.randomness_bits) ** g.params.n
    if space > cap:
        raise CapExceeded(space, cap, "coin enumeration")
    counts: dict[int, int] = {}
    for coins in itertools.product(range(1 << g.randomness_bits), repeat=g.params.n):
        z = g.output_map(_virtual_transcript(g, list(coins)))
        counts[z] = counts.get(z, 0) + 1
    return Distribution.from_counts(g.params.m, counts, kind="exact", total=space)


def is_good_randomness(g: GeneralProtocolSpec, prefix: Transcript, party: int, r: int) -> bool:
    """True iff replaying the party's message functions with randomness r
    reproduces exactly its messages in the prefix."""
    for e in prefix.entries:
        if e.party != party:
            continue
        prior = prefix.rounds_prefix(e.round)
        if g.message_fn(e.round, party, prior, r) != e.message:
            return False
    return True


def _permutation_code(perm: tuple[int, ...], ell_r: int) -> int:
    code = 0
    for idx, v in enumerate(perm):
        code |= v << (idx * ell_r)
    return code


def permutation_universe(ell_r: int) -> tuple[int, ...]:
    """All encodings of permutations of the 2^ell_r randomness strings."""
    K = 1 << ell_r
    return tuple(_permutation_code(p, ell_r) for p in itertools.permutations(range(K)))


@dataclass(frozen=True)
class DecodeResult:
    virtual: Transcript
    fallbacks: int       # slots where no listed string was good


def decode_transcript(g: GeneralProtocolSpec, long_trans: Transcript) -> DecodeResult:
    """Reconstruct the virtual transcript from transformed messages.

    Corrupted parties may send arbitrary strings that are not permutations;
    decoding still takes the first good listed entry, and when none exists
    the reconstructed message is the all-zero string (a total decode rule is
    required; such slots are counted in ``fallbacks``).
    """
    K = 1 << g.randomness_bits
    mask = K - 1
    table = {(e.round, e.party): e.message for e in long_trans.entries}
    entries: list[TranscriptEntry] = []
    fallbacks = 0
    for i in range(1, g.params.d + 1):
        prior = Transcript(tuple(entries))
        for j in range(1, g.params.n + 1):
            u_ij = table[(i, j)]
            virtual_msg: Optional[int] = None
            for idx in range(K):
                r = (u_ij >> (idx * g.randomness_bits)) & mask
                if is_good_randomness(g, prior, j, r):
                    virtual_msg = g.message_fn(i, j, prior, r)
                    break
            if virtual_msg is None:
                virtual_msg = 0
                fallbacks += 1
            entries.append(TranscriptEntry(i, j, virtual_msg, False))
    return DecodeResult(Transcript(tuple(entries)), fallbacks)


def public_coin_transform(g: GeneralProtocolSpec, ellr_cap: int = DEFAULT_ELLR_CAP) -> ProtocolSpec:
    """The public-coin protocol simulating g, with identical output
    distribution and round count.

    Honest messages are uniform over permutation encodings (length
    2^ell_r * ell_r bits); the output map decodes and defers to g.
    """
    if g.randomness_bits > ellr_cap:
        raise CapExceeded(g.randomness_bits, ellr_cap, "transformed message length")
    K = 1 << g.randomness_bits
    L_new = K * g.randomness_bits
    params = ProtocolParams(n=g.params.n, d=g.params.d, L=L_new, m=g.params.m)
    universe = permutation_universe(g.randomness_bits)

    def output_map(long_trans: Transcript) -> int:
        return g.output_map(decode_transcript(g, long_trans).virtual)

    return ProtocolSpec(params, output_map, label=f"publiccoin({g.label})",
                        universe=universe)


# ---------------------------------------------------------------------------
# Built-in general protocols
# ---------------------------------------------------------------------------


def make_and_reveal() -> GeneralProtocolSpec:
    """Two parties, two rounds: round 1 reveals each party's bit; in round 2
    party 1 announces the AND of both round-1 bits, which is the output.
    Honest output distribution is (3/4, 1/4)."""

    def message_fn(i: int, j: int, prior: Transcript, r: int) -> int:
        if i == 1:
            return r & 1
        if j == 1:
            return prior.message_of(1, 1) & prior.message_of(1, 2)
        return r & 1

    def output_map(trans: Transcript) -> int:
        return trans.message_of(2, 1)

    return GeneralProtocolSpec(ProtocolParams(n=2, d=2, L=1, m=1), 1,
                               message_fn, output_map, label="and_reveal")


def make_majority_private(n: int = 3) -> GeneralProtocolSpec:
    """Each party reveals its private bit; output is the majority (tie: 0)."""

    def message_fn(i: int, j: int, prior: Transcript, r: int) -> int:
        return r & 1

    def output_map(trans: Transcript) -> int:
        ones = sum(e.message for e in trans.entries)
        return 1 if 2 * ones > n else 0

    return GeneralProtocolSpec(ProtocolParams(n=n, d=1, L=1, m=1), 1,
                               message_fn, output_map, label=f"majority_private(n={n})")


def make_xor_pair_reveal() -> GeneralProtocolSpec:
    """Two parties each reveal a 2-bit random string; output is the XOR.
    Already public-coin, so the transform is a pure re-encoding."""

    def message_fn(i: int, j: int, prior: Transcript, r: int) -> int:
        return r & 3

    def output_map(trans: Transcript) -> int:
        return trans.message_of(1, 1) ^ trans.message_of(1, 2)

    return GeneralProtocolSpec(ProtocolParams(n=2, d=1, L=2, m=2), 2,
                               message_fn, output_map, label="xor_pair_reveal")


GENERAL_PROTOCOLS: dict[str, Callable[[], GeneralProtocolSpec]] = {
    "and_reveal": make_and_reveal,
    "majority_private": make_majority_private,
    "xor_pair_reveal": make_xor_pair_reveal,
}
