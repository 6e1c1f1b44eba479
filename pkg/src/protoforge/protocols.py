"""Built-in protocol constructors: coin flipping, majority, selection, leader
election.  All are public-coin and exercise the framework at desk scale.
"""

from __future__ import annotations

from typing import Callable

from .core import ProtocolParams, ProtocolSpec, Transcript
from .errors import WidthMismatch


def make_xor_coin(n: int, d: int, L: int) -> ProtocolSpec:
    """Coin flip: the output bit is the XOR of all d*n*L transcript bits."""
    params = ProtocolParams(n=n, d=d, L=L, m=1)

    def output_map(trans: Transcript) -> int:
        acc = 0
        for e in trans.entries:
            acc ^= e.message
        # fold L bits down to their parity
        bit = 0
        while acc:
            bit ^= acc & 1
            acc >>= 1
        return bit

    return ProtocolSpec(params, output_map, label=f"xor_coin(n={n},d={d},L={L})")


def make_majority_coin(n: int) -> ProtocolSpec:
    """One round, one bit per party; the output is the majority bit.

    Odd n gives an exactly uniform honest output.  Even n is allowed for
    large-scale bias probes; a tie counts as output 0.
    """
    params = ProtocolParams(n=n, d=1, L=1, m=1)

    def output_map(trans: Transcript) -> int:
        ones = sum(e.message for e in trans.entries)
        return 1 if 2 * ones > n else 0

    return ProtocolSpec(params, output_map, label=f"majority_coin(n={n})")


def make_xor_selection(n: int, d: int, L: int, m: int) -> ProtocolSpec:
    """Selection: bitwise XOR of the first m bits of every message.

    The first m bits of a message are its most significant bits when the
    message is read as an L-bit string.  The honest output is exactly
    uniform over {0,1}^m.
    """
    if m > L:
        raise WidthMismatch(f"m={m} exceeds message length L={L}")
    params = ProtocolParams(n=n, d=d, L=L, m=m)
    shift = L - m

    def output_map(trans: Transcript) -> int:
        acc = 0
        for e in trans.entries:
            acc ^= e.message >> shift
        return acc

    return ProtocolSpec(params, output_map, label=f"xor_selection(n={n},d={d},L={L},m={m})")


def _bit_reverse(value: int, width: int) -> int:
    out = 0
    for b in range(width):
        out |= ((value >> b) & 1) << (width - 1 - b)
    return out


def make_leader_election_mod_n(n: int, L: int) -> ProtocolSpec:
    """One round; the leader is the sum of all messages mod n.

    The leader index is stored little-endian in the m = ceil(log2 n) output
    bits; indices >= n are unused.  The honest distribution is uniform over
    the n leaders whenever 2^L is a multiple of n, and is computed exactly by
    enumeration otherwise.
    """
    m = max(1, (n - 1).bit_length())
    params = ProtocolParams(n=n, d=1, L=L, m=m)

    def output_map(trans: Transcript) -> int:
        total = sum(e.message for e in trans.entries)
        return _bit_reverse(total % n, m)

    return ProtocolSpec(params, output_map, label=f"leader_election_mod_n(n={n},L={L})")


#: Registry used by the CLI config: id -> (constructor, parameter names).
BUILTIN_PROTOCOLS: dict[str, tuple[Callable[..., ProtocolSpec], tuple[str, ...]]] = {
    "xor_coin": (make_xor_coin, ("n", "d", "L")),
    "majority_coin": (make_majority_coin, ("n",)),
    "xor_selection": (make_xor_selection, ("n", "d", "L", "m")),
    "leader_election_mod_n": (make_leader_election_mod_n, ("n", "L")),
}


def make_builtin(protocol_id: str, **params) -> ProtocolSpec:
    if protocol_id not in BUILTIN_PROTOCOLS:
        raise KeyError(f"unknown protocol id {protocol_id!r}")
    ctor, names = BUILTIN_PROTOCOLS[protocol_id]
    unknown = set(params) - set(names)
    if unknown:
        raise TypeError(f"{protocol_id} does not take {sorted(unknown)}")
    missing = set(names) - set(params)
    if missing:
        raise TypeError(f"{protocol_id} requires {sorted(missing)}")
    return ctor(**{k: params[k] for k in names})
