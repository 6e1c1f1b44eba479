"""Protocol model and the deterministic, seeded execution engine.

The model is the synchronous full-information setting: n parties, d rounds,
every party sends exactly one L-bit message per round, and honest messages
are fresh uniform random strings (public-coin).  A rushing adversary may
reorder speakers within a round, corrupt parties adaptively within a budget,
and send arbitrary messages for corrupted parties.

Everything here is a pure function of (spec, strategy, seed): replaying the
same inputs yields byte-identical transcripts.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, NamedTuple, Optional, Protocol, Sequence

from .errors import BudgetExceeded, CapExceeded, ScheduleViolation
from .stats import Distribution

DEFAULT_ENUM_CAP = 2**24

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# Seeded randomness
# ---------------------------------------------------------------------------


class RngSeed:
    """Counter-based deterministic random stream keyed by a 64-bit seed.

    Draws are addressed by a derivation path (context tag, round, party,
    draw index, ...).  Identical (seed, path) always yields identical bits;
    distinct paths yield independent-looking streams.  There is no hidden
    state, so callers may fan out draws across workers in any order.
    """

    __slots__ = ("seed", "_key", "_cache")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self._key = self.seed.to_bytes(8, "little")
        self._cache: dict = {}

    def __repr__(self) -> str:
        return f"RngSeed({self.seed})"

    @staticmethod
    def _encode_path(path: tuple) -> bytes:
        parts = []
        for p in path:
            if isinstance(p, int):
                b = p.to_bytes((p.bit_length() + 8) // 8 or 1, "little", signed=True)
                parts.append(b"i" + len(b).to_bytes(2, "little") + b)
            elif isinstance(p, str):
                b = p.encode("utf-8")
                parts.append(b"s" + len(b).to_bytes(2, "little") + b)
            elif isinstance(p, bytes):
                parts.append(b"b" + len(p).to_bytes(2, "little") + p)
            else:
                raise TypeError(f"unsupported path element {p!r}")
        return b"".join(parts)

    def bits(self, nbits: int, *path) -> int:
        """Return a uniform nbits-bit integer for this derivation path."""
        if nbits <= 0:
            return 0
        base = self._encode_path(path)
        out = 0
        got = 0
        block = 0
        while got < nbits:
            h = hashlib.blake2b(
                base + block.to_bytes(4, "little"), key=self._key, digest_size=64
            ).digest()
            out |= int.from_bytes(h, "little") << got
            got += 512
            block += 1
        return out & ((1 << nbits) - 1)

    def below(self, bound: int, *path) -> int:
        """Uniform integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        if bound == 1:
            return 0
        nbits = (bound - 1).bit_length()
        attempt = 0
        while True:
            v = self.bits(nbits, *path, attempt)
            if v < bound:
                return v
            attempt += 1

    def choice(self, seq: Sequence, *path):
        return seq[self.below(len(seq), *path)]

    def shuffled(self, seq: Sequence, *path) -> list:
        """Fisher-Yates shuffle driven by this stream."""
        out = list(seq)
        for i in range(len(out) - 1, 0, -1):
            j = self.below(i + 1, *path, i)
            out[i], out[j] = out[j], out[i]
        return out

    def child(self, *path) -> "RngSeed":
        """Derive an independent 64-bit sub-seed."""
        return RngSeed(self.bits(64, "child", *path))


def _as_seed(seed) -> RngSeed:
    return seed if isinstance(seed, RngSeed) else RngSeed(int(seed))


# ---------------------------------------------------------------------------
# Protocol types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolParams:
    """Shape of a protocol: n parties, d rounds, L-bit messages, m-bit output.

    Every party speaks exactly once per round, so a complete transcript has
    exactly d*n messages.
    """

    n: int
    d: int
    L: int
    m: int

    def validate(self) -> list[str]:
        errs = []
        if self.n < 1:
            errs.append("n >= 1 required")
        if self.d < 1:
            errs.append("d >= 1 required")
        if self.L < 1:
            errs.append("L >= 1 required")
        if self.m < 1:
            errs.append("m >= 1 required")
        return errs

    @property
    def slots(self) -> int:
        return self.d * self.n


class TranscriptEntry(NamedTuple):
    round: int      # 1-based round index
    party: int      # 1-based party index
    message: int    # value in [0, 2^L)
    corrupted: bool  # speaker status at send time


@dataclass(frozen=True)
class Transcript:
    """Ordered record of who spoke when and what they sent.

    Entry order is the actual send order, which under a rushing adversary
    may differ from ascending party index within a round.
    """

    entries: tuple[TranscriptEntry, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def message_of(self, round_: int, party: int) -> int:
        for e in self.entries:
            if e.round == round_ and e.party == party:
                return e.message
        raise KeyError((round_, party))

    def messages_in_canonical_order(self, params: ProtocolParams) -> list[int]:
        """Messages sorted by (round, party), independent of send order."""
        table = {}
        for e in self.entries:
            table[(e.round, e.party)] = e.message
        return [table[(i, u)] for i in range(1, params.d + 1) for u in range(1, params.n + 1)]

    def rounds_prefix(self, upto_round: int) -> "Transcript":
        """Entries of rounds strictly before upto_round."""
        return Transcript(tuple(e for e in self.entries if e.round < upto_round))

    def is_complete(self, params: ProtocolParams) -> bool:
        return len(self.entries) == params.slots

    def check_shape(self, params: ProtocolParams) -> list[str]:
        errs = []
        seen: set[tuple[int, int]] = set()
        last_round = 1
        for e in self.entries:
            if not (1 <= e.round <= params.d and 1 <= e.party <= params.n):
                errs.append(f"entry {e} out of range")
            if e.round < last_round:
                errs.append(f"round order violated at {e}")
            last_round = max(last_round, e.round)
            if (e.round, e.party) in seen:
                errs.append(f"party {e.party} spoke twice in round {e.round}")
            seen.add((e.round, e.party))
            if not (0 <= e.message < (1 << params.L)):
                errs.append(f"message {e.message} exceeds {params.L} bits")
        return errs


# Short transcripts (ell-bit messages) share the representation; the message
# width is carried by the owning protocol's params.
ShortTranscript = Transcript


@dataclass(frozen=True)
class ProtocolSpec:
    """A public-coin protocol: shape, output map, and a human-readable label.

    ``output_map`` must be total and deterministic on complete transcripts of
    shape (d, n, L).  ``universe``, when given, restricts *honest* draws to an
    explicit list of allowed message values; corrupted senders may still use
    any L-bit value.  The default (None) is the full set of L-bit strings.
    """

    params: ProtocolParams
    output_map: Callable[[Transcript], int]
    label: str = "unnamed"
    universe: Optional[tuple[int, ...]] = None

    def universe_values(self) -> Sequence[int]:
        if self.universe is not None:
            return self.universe
        return range(1 << self.params.L)

    def universe_size(self) -> int:
        return len(self.universe) if self.universe is not None else (1 << self.params.L)


# ---------------------------------------------------------------------------
# Adversary interface (implementations live in protoforge.adversaries)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Corrupt:
    party: int


@dataclass(frozen=True)
class ScheduleHonest:
    party: int


@dataclass(frozen=True)
class SendAs:
    party: int
    message: int


AdversaryAction = Corrupt | ScheduleHonest | SendAs


class AdversaryView:
    """What a strategy sees before each message slot.

    ``transcript`` is a live, read-only view of the run so far; strategies
    must not mutate it.  ``pending`` is the set of parties that have not yet
    spoken in the current round.
    """

    __slots__ = ("entries", "corrupted", "budget", "pending", "round", "params")

    def __init__(self, entries, corrupted, budget, pending, round_, params):
        self.entries = entries
        self.corrupted = corrupted
        self.budget = budget
        self.pending = pending
        self.round = round_
        self.params = params

    @property
    def transcript(self) -> Transcript:
        return Transcript(tuple(self.entries))

    def key(self) -> tuple:
        """Canonical hashable state, used for memoization and policy tables."""
        return (tuple(self.entries), frozenset(self.corrupted), self.budget)


class AdversaryStrategy(Protocol):
    def decide(self, view: AdversaryView) -> AdversaryAction: ...


# ---------------------------------------------------------------------------
# Execution engine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HonestRun:
    transcript: Transcript
    output: int


@dataclass(frozen=True)
class AdversarialRun:
    transcript: Transcript
    output: int
    corrupted: frozenset[int]


class _HonestDraws:
    """Lazy per-round honest message blocks keyed by (seed, round).

    Party u's message in round i is a fixed slice of the round-i block, so
    the value does not depend on when the adversary schedules u.
    """

    def __init__(self, spec: ProtocolSpec, seed: RngSeed):
        self.spec = spec
        self.seed = seed
        self._blocks: dict[int, int] = {}

    def message(self, round_: int, party: int) -> int:
        spec = self.spec
        if spec.universe is None:
            L, n = spec.params.L, spec.params.n
            block = self._blocks.get(round_)
            if block is None:
                block = self.seed.bits(n * L, "honest", round_)
                self._blocks[round_] = block
            return (block >> ((party - 1) * L)) & ((1 << L) - 1)
        idx = self.seed.below(len(spec.universe), "honest", round_, party)
        return spec.universe[idx]


def run_honest(spec: ProtocolSpec, seed) -> HonestRun:
    """Execute spec with all parties honest, ascending party order per round."""
    seed = _as_seed(seed)
    draws = _HonestDraws(spec, seed)
    entries = []
    for i in range(1, spec.params.d + 1):
        for u in range(1, spec.params.n + 1):
            entries.append(TranscriptEntry(i, u, draws.message(i, u), False))
    trans = Transcript(tuple(entries))
    return HonestRun(trans, spec.output_map(trans))


def run_with_adversary(
    spec: ProtocolSpec,
    strategy: AdversaryStrategy,
    t: int,
    seed,
) -> AdversarialRun:
    """Execute spec against an adaptive rushing adversary with budget t.

    The strategy is consulted before every message slot and may corrupt
    (repeatedly, within budget), schedule an honest party, or send for a
    corrupted party.  Attempting corruption t+1 raises BudgetExceeded;
    targeting a party that already spoke this round (or an illegal
    send/schedule target) raises ScheduleViolation.
    """
    if t > spec.params.n:
        raise ValueError("corruption budget exceeds party count")
    seed = _as_seed(seed)
    draws = _HonestDraws(spec, seed)
    n, d, L = spec.params.n, spec.params.d, spec.params.L
    entries: list[TranscriptEntry] = []
    corrupted: set[int] = set()
    for i in range(1, d + 1):
        pending = set(range(1, n + 1))
        while pending:
            view = AdversaryView(entries, frozenset(corrupted), t - len(corrupted),
                                 frozenset(pending), i, spec.params)
            action = strategy.decide(view)
            if isinstance(action, Corrupt):
                u = action.party
                if u in corrupted:
                    raise ScheduleViolation(f"party {u} is already corrupted")
                if not (1 <= u <= n):
                    raise ScheduleViolation(f"no such party {u}")
                if len(corrupted) >= t:
                    raise BudgetExceeded(f"corruption budget {t} exhausted")
                corrupted.add(u)
            elif isinstance(action, ScheduleHonest):
                u = action.party
                if u not in pending:
                    raise ScheduleViolation(f"party {u} already spoke in round {i}")
                if u in corrupted:
                    raise ScheduleViolation(f"party {u} is corrupted, not honest")
                entries.append(TranscriptEntry(i, u, draws.message(i, u), False))
                pending.discard(u)
            elif isinstance(action, SendAs):
                u = action.party
                if u not in pending:
                    raise ScheduleViolation(f"party {u} already spoke in round {i}")
                if u not in corrupted:
                    raise ScheduleViolation(f"SendAs for uncorrupted party {u}")
                if not (0 <= action.message < (1 << L)):
                    raise ScheduleViolation(f"message {action.message} exceeds {L} bits")
                entries.append(TranscriptEntry(i, u, action.message, True))
                pending.discard(u)
            else:
                raise ScheduleViolation(f"unknown action {action!r}")
    assert len(corrupted) <= t
    trans = Transcript(tuple(entries))
    return AdversarialRun(trans, spec.output_map(trans), frozenset(corrupted))


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------


def honest_transcript_from_messages(spec: ProtocolSpec, messages: Sequence[int]) -> Transcript:
    """Complete honest-order transcript from messages in canonical slot order."""
    n = spec.params.n
    return Transcript(tuple(
        TranscriptEntry(k // n + 1, k % n + 1, msg, False)
        for k, msg in enumerate(messages)
    ))


def iter_honest_assignments(spec: ProtocolSpec, cap: int = DEFAULT_ENUM_CAP) -> Iterable[tuple[int, ...]]:
    """Yield every honest randomness assignment (one message per slot)."""
    count = spec.universe_size() ** spec.params.slots
    if count > cap:
        raise CapExceeded(count, cap, "honest enumeration")
    values = tuple(spec.universe_values())
    return itertools.product(values, repeat=spec.params.slots)


def enumerate_honest_outputs(spec: ProtocolSpec, cap: int = DEFAULT_ENUM_CAP) -> Distribution:
    """Exact honest output distribution by iterating all randomness assignments.

    Masses are rationals over the fixed denominator |universe|^(d*n), so
    statistical-distance comparisons downstream are bit-exact.
    """
    counts: dict[int, int] = {}
    total = 0
    n = spec.params.n
    entry = TranscriptEntry
    out_map = spec.output_map
    slot_meta = [(k // n + 1, k % n + 1) for k in range(spec.params.slots)]
    for assignment in iter_honest_assignments(spec, cap):
        trans = Transcript(tuple(
            entry(i, u, msg, False) for (i, u), msg in zip(slot_meta, assignment)
        ))
        z = out_map(trans)
        counts[z] = counts.get(z, 0) + 1
        total += 1
    mass = {z: Fraction(c, total) for z, c in sorted(counts.items())}
    return Distribution(width=spec.params.m, mass=mass, kind="exact")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_protocol(spec: ProtocolSpec, probes: int = 16, seed: int = 0) -> list[str]:
    """Structured diagnostics for a spec; an empty list means ok.

    Checks parameter bounds, then probes the output map on random complete
    transcripts for totality, output width, and determinism.  Never raises.
    """
    errs = spec.params.validate()
    if errs:
        return errs
    if spec.universe is not None:
        if len(spec.universe) == 0:
            errs.append("universe must be nonempty")
        for v in spec.universe:
            if not (0 <= v < (1 << spec.params.L)):
                errs.append(f"universe value {v} exceeds {spec.params.L} bits")
                break
        if len(set(spec.universe)) != len(spec.universe):
            errs.append("universe values must be distinct")
    if errs:
        return errs
    rng = RngSeed(seed)
    values = tuple(spec.universe_values()) if spec.universe is not None else None
    for p in range(probes):
        msgs = []
        for k in range(spec.params.slots):
            if values is None:
                msgs.append(rng.bits(spec.params.L, "probe", p, k))
            else:
                msgs.append(values[rng.below(len(values), "probe", p, k)])
        trans = honest_transcript_from_messages(spec, msgs)
        try:
            z1 = spec.output_map(trans)
            z2 = spec.output_map(trans)
        except Exception as exc:  # noqa: BLE001 - diagnostics, not control flow
            errs.append(f"output_map raised on probe {p}: {exc!r}")
            continue
        if z1 != z2:
            errs.append(f"output_map nondeterministic on probe {p}")
        if not isinstance(z1, int) or not (0 <= z1 < (1 << spec.params.m)):
            errs.append(f"output width mismatch: {z1!r} not an {spec.params.m}-bit value")
    return errs
