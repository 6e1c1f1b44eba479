"""Message compression: the matrix family, the compressed protocol, the
partial inverse map, the adaptive reduction adversary with consistent-set
tracking, the static reduction, hybrid experiments, and desk-scale checks of
the simulation and security-preservation properties.

A matrix H assigns to each (round, party) slot a row of N = 2^ell long
messages; the compressed protocol sends ell-bit indices and evaluates the
base protocol on the row images.  The reduction adversary turns a family of
per-matrix attacks on the compressed protocol into an attack on the base
protocol by tracking, step by step, the subset of matrices consistent with
the run so far.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Optional, Sequence

from .adversaries import (
    SecurityParams,
    optimal_adaptive_value,
)
from .core import (
    AdversaryView,
    Corrupt,
    DEFAULT_ENUM_CAP,
    ProtocolParams,
    ProtocolSpec,
    RngSeed,
    ScheduleHonest,
    SendAs,
    Transcript,
    TranscriptEntry,
    _as_seed,
    enumerate_honest_outputs,
)
from .errors import (
    BudgetExceeded,
    CapExceeded,
    EmptyConsistentSet,
    EmptyFamily,
    ShapeMismatch,
)
from .stats import Distribution, statistical_distance

FAMILY_ENUM_CAP_BITS = 24
MATRIX_MEMORY_CAP_BITS = 2**26


# ---------------------------------------------------------------------------
# Parameters and closed-form quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompressionParams:
    """Short message length ell on top of a base protocol shape."""

    base: ProtocolParams
    ell: int

    def __post_init__(self):
        if not (1 <= self.ell <= self.base.L):
            raise ShapeMismatch(f"need 1 <= ell <= L, got ell={self.ell}, L={self.base.L}")

    @property
    def N(self) -> int:
        return 1 << self.ell

    @property
    def table_bits(self) -> int:
        return self.base.slots * self.N * self.base.L

    @property
    def family_size_log2(self) -> int:
        return self.table_bits


def ell_formula(m: int, n: int, d: int) -> int:
    """Short message length m * log2(n*d)^4, rounded up to a whole bit."""
    if n * d < 2:
        raise ValueError("n*d >= 2 required")
    return math.ceil(m * math.log2(n * d) ** 4)


@dataclass(frozen=True)
class SlackBudget:
    """The closed-form slack governing the reduction's statistical loss.

    epsilon = 2^(-log2(dn)^2) and mu_star = (sqrt(eps) + 1 - (1-eps)^(dn)) * 2dn.
    At desk-scale parameters mu_star routinely exceeds 1 and is then flagged
    vacuous; experiments report measured slack alongside it.
    """

    epsilon: float
    mu_star: float
    vacuous: bool
    measured_slack: Optional[float] = None


def mu_star(n: int, d: int) -> SlackBudget:
    if d * n < 2:
        raise ValueError("d*n >= 2 required")
    dn = d * n
    eps = 2.0 ** (-(math.log2(dn) ** 2))
    mu = (math.sqrt(eps) + 1.0 - (1.0 - eps) ** dn) * 2.0 * dn
    return SlackBudget(epsilon=eps, mu_star=mu, vacuous=mu >= 1.0)


# ---------------------------------------------------------------------------
# The matrix type
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixH:
    """A table [d]x[n]x{0,1}^ell -> {0,1}^L stored as a flat entry tuple.

    Row (i, j) starts at flat index ((i-1)*n + (j-1)) * N.  Rows may contain
    duplicate values; the family is all functions, not injections.  The flat
    code orders matrices lexicographically by their concatenated bit string,
    with entry 0 in the most significant position, so enumeration order and
    fixtures are byte-stable.
    """

    d: int
    n: int
    ell: int
    L: int
    entries: tuple[int, ...]

    def __post_init__(self):
        if len(self.entries) != self.d * self.n * self.N:
            raise ShapeMismatch(
                f"expected {self.d * self.n * self.N} entries, got {len(self.entries)}")
        top = 1 << self.L
        for v in self.entries:
            if not (0 <= v < top):
                raise ShapeMismatch(f"entry {v} exceeds {self.L} bits")

    @property
    def N(self) -> int:
        return 1 << self.ell

    def row_start(self, i: int, j: int) -> int:
        return ((i - 1) * self.n + (j - 1)) * self.N

    def row(self, i: int, j: int) -> tuple[int, ...]:
        s = self.row_start(i, j)
        return self.entries[s:s + self.N]

    def entry(self, i: int, j: int, r: int) -> int:
        return self.entries[self.row_start(i, j) + r]

    @property
    def code(self) -> int:
        c = 0
        for v in self.entries:
            c = (c << self.L) | v
        return c

    @classmethod
    def from_code(cls, cp: CompressionParams, code: int) -> "MatrixH":
        total = cp.base.slots * cp.N
        mask = (1 << cp.base.L) - 1
        entries = tuple(
            (code >> ((total - 1 - f) * cp.base.L)) & mask for f in range(total)
        )
        return cls(d=cp.base.d, n=cp.base.n, ell=cp.ell, L=cp.base.L, entries=entries)

    def to_bytes(self) -> bytes:
        """.hmat format: header d, n, ell, L as u32 LE, then the flat bit
        array MSB-first, padded with zero bits to a byte boundary."""
        header = struct.pack("<IIII", self.d, self.n, self.ell, self.L)
        nbits = len(self.entries) * self.L
        nbytes = (nbits + 7) // 8
        body = (self.code << (nbytes * 8 - nbits)).to_bytes(nbytes, "big")
        return header + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "MatrixH":
        d, n, ell, L = struct.unpack("<IIII", blob[:16])
        cp = CompressionParams(ProtocolParams(n=n, d=d, L=L, m=1), ell)
        nbits = d * n * (1 << ell) * L
        nbytes = (nbits + 7) // 8
        code = int.from_bytes(blob[16:16 + nbytes], "big") >> (nbytes * 8 - nbits)
        return cls.from_code(cp, code)


def sample_matrix(cp: CompressionParams, seed) -> MatrixH:
    """Uniform matrix: every entry an independent uniform L-bit string."""
    if cp.table_bits > MATRIX_MEMORY_CAP_BITS:
        raise CapExceeded(cp.table_bits, MATRIX_MEMORY_CAP_BITS, "matrix memory")
    seed = _as_seed(seed)
    total = cp.base.slots * cp.N
    L = cp.base.L
    big = seed.bits(total * L, "matrix")
    mask = (1 << L) - 1
    entries = tuple((big >> (f * L)) & mask for f in range(total))
    return MatrixH(d=cp.base.d, n=cp.base.n, ell=cp.ell, L=L, entries=entries)


def enumerate_family(cp: CompressionParams) -> Iterator[MatrixH]:
    """All matrices, in lexicographic order of the flat bit string."""
    if cp.table_bits > FAMILY_ENUM_CAP_BITS:
        raise CapExceeded(2 ** min(cp.table_bits, 63), 2 ** FAMILY_ENUM_CAP_BITS,
                          "family enumeration")
    for code in range(1 << cp.table_bits):
        yield MatrixH.from_code(cp, code)


# ---------------------------------------------------------------------------
# The compressed protocol and the partial inverse
# ---------------------------------------------------------------------------


def compressed_protocol(spec: ProtocolSpec, H: MatrixH) -> ProtocolSpec:
    """The short protocol: ell-bit messages, output lifted through H.

    The output on a short transcript is the base output on the transcript
    obtained by replacing each entry's message r with H(i, u, r).
    """
    p = spec.params
    if (H.d, H.n, H.L) != (p.d, p.n, p.L):
        raise ShapeMismatch(f"matrix shape ({H.d},{H.n},L={H.L}) does not match {p}")
    if spec.universe is not None:
        raise ShapeMismatch("compression applies to full-universe public-coin specs")
    short_params = ProtocolParams(n=p.n, d=p.d, L=H.ell, m=p.m)

    def output_map(short: Transcript) -> int:
        lifted = Transcript(tuple(
            TranscriptEntry(e.round, e.party, H.entry(e.round, e.party, e.message), e.corrupted)
            for e in short.entries
        ))
        return spec.output_map(lifted)

    return ProtocolSpec(short_params, output_map,
                        label=f"{spec.label}|H(ell={H.ell})")


def map_h(H: MatrixH, i: int, u: int, R: int) -> Optional[int]:
    """Smallest r with H(i, u, r) = R, or None when R has no preimage."""
    s = H.row_start(i, u)
    entries = H.entries
    for r in range(H.N):
        if entries[s + r] == R:
            return r
    return None


def map_transcript(H: MatrixH, trans: Transcript | Sequence[TranscriptEntry]) -> Optional[Transcript]:
    """Slot-wise map_h over a (possibly partial) long transcript; None if any
    slot's message has no preimage in its row."""
    entries = trans.entries if isinstance(trans, Transcript) else tuple(trans)
    out = []
    for e in entries:
        r = map_h(H, e.round, e.party, e.message)
        if r is None:
            return None
        out.append(TranscriptEntry(e.round, e.party, r, e.corrupted))
    return Transcript(tuple(out))


def lift_transcript(H: MatrixH, short: Transcript) -> Transcript:
    return Transcript(tuple(
        TranscriptEntry(e.round, e.party, H.entry(e.round, e.party, e.message), e.corrupted)
        for e in short.entries
    ))


# ---------------------------------------------------------------------------
# Consistent sets and the Figure-style reduction adversary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsistentSet:
    """Snapshot of the matrices still compatible with a reduction run.

    ``members`` are indices into the supplied family; ``position`` is the
    (round, slot-within-round) of the next message; ``history`` is the long
    transcript prefix so far.
    """

    members: tuple[int, ...]
    position: tuple[int, int]
    history: Transcript


class _FamilyCache:
    """Shared memo for per-matrix simulations of the short adversaries.

    Keyed by (matrix index, mapped short prefix, corrupted, budget, pending,
    round); the strategies must be pure functions of their view, so entries
    can be shared across runs and across branches of exact walkers.
    """

    def __init__(self):
        self.bundles: dict = {}


@dataclass
class _SlotPlan:
    hstar: int
    corrupts: tuple[int, ...]
    final: tuple          # ("sched", u) or ("send", u, r_short, R_long)
    post_if_send: Optional[tuple[int, ...]]  # filter after a corrupt send
    # pre-slot state, needed to re-evaluate member bundles for the filters
    pre_corrupted: frozenset = frozenset()
    pre_budget: int = 0
    pre_pending: frozenset = frozenset()
    pre_round: int = 1


class ReductionAdversary:
    """The adaptive reduction: simulate a uniformly chosen consistent
    per-matrix adversary, mirroring its corruptions and messages.

    Before each message slot: halt with bottom if no matrix is consistent;
    otherwise draw H* uniformly from the consistent set, map the long prefix
    into H*'s short protocol, and replay the short adversary's decisions.
    A corrupted send r* becomes the long message H*(i, u, r*), after which
    the set keeps matrices agreeing with H* on row (i, u) whose adversary
    sends the same r*.  An honest order is mirrored; once the honest long
    message R* is seen, a uniformly chosen matrix among those ordering the
    same party and having a preimage for R* donates its row (i, u), and the
    set keeps matrices agreeing on that row that order the same party.
    """

    def __init__(self, family: Sequence[tuple[MatrixH, object]], base_spec: ProtocolSpec,
                 t: int, seed, shared_cache: Optional[_FamilyCache] = None):
        if not family:
            raise EmptyFamily("reduction needs a nonempty matrix family")
        p = base_spec.params
        shapes = {(H.d, H.n, H.ell, H.L) for H, _ in family}
        if len(shapes) != 1:
            raise ShapeMismatch(f"family mixes shapes {shapes}")
        (d, n, ell, L) = next(iter(shapes))
        if (d, n, L) != (p.d, p.n, p.L):
            raise ShapeMismatch("family shape does not match the base protocol")
        self.family = list(family)
        self.base_spec = base_spec
        self.t = t
        self.ell = ell
        self.seed = _as_seed(seed)
        self.cache = shared_cache if shared_cache is not None else _FamilyCache()
        self.short_params = ProtocolParams(n=p.n, d=p.d, L=ell, m=p.m)
        # per-run memo tables, keyed by long transcript prefix
        self._sets: dict[tuple, tuple[int, ...]] = {(): tuple(range(len(family)))}
        self._plans: dict[tuple, _SlotPlan] = {}
        self._maps: dict[tuple[int, tuple], Optional[tuple]] = {}

    # -- short-side simulation -------------------------------------------

    def _mapped(self, h_idx: int, prefix: tuple) -> Optional[tuple]:
        key = (h_idx, prefix)
        hit = self._maps.get(key)
        if key in self._maps:
            return hit
        short = map_transcript(self.family[h_idx][0], prefix)
        val = short.entries if short is not None else None
        self._maps[key] = val
        return val

    def _bundle(self, h_idx: int, prefix: tuple, corrupted: frozenset,
                budget: int, pending: frozenset, round_: int) -> Optional[tuple]:
        """Corruptions plus the slot-filling action of A^H at this point,
        simulated on the mapped short prefix.  None if the prefix has no
        short image under H (cannot happen for consistent members)."""
        short_entries = self._mapped(h_idx, prefix)
        if short_entries is None:
            return None
        ckey = (h_idx, short_entries, corrupted, budget, pending, round_)
        hit = self.cache.bundles.get(ckey)
        if hit is not None:
            return hit
        strat = self.family[h_idx][1]
        cur_corr = set(corrupted)
        cur_budget = budget
        corrupts = []
        entries = list(short_entries)
        while True:
            view = AdversaryView(entries, frozenset(cur_corr), cur_budget,
                                 pending, round_, self.short_params)
            action = strat.decide(view)
            if isinstance(action, Corrupt):
                if action.party in cur_corr or cur_budget <= 0:
                    raise BudgetExceeded("family strategy made an illegal corruption")
                cur_corr.add(action.party)
                cur_budget -= 1
                corrupts.append(action.party)
                continue
            if isinstance(action, ScheduleHonest):
                final = ("sched", action.party)
            else:
                final = ("send", action.party, action.message)
            result = (tuple(corrupts), final)
            self.cache.bundles[ckey] = result
            return result

    # -- consistent-set evolution ----------------------------------------

    def _set_after(self, prefix: tuple) -> tuple[int, ...]:
        hit = self._sets.get(prefix)
        if hit is not None:
            return hit
        parent = prefix[:-1]
        entry = prefix[-1]
        S = self._set_after(parent)
        plan = self._plans.get(parent)
        if plan is None or not S:
            # a plan is always made before the entry is produced; an empty
            # parent set means the run already halted
            post: tuple[int, ...] = ()
        elif plan.final[0] == "send":
            post = plan.post_if_send or ()
        else:
            u = plan.final[1]
            assert entry.party == u and not entry.corrupted
            i = entry.round
            R_star = entry.message
            sched_members = [
                h for h in S
                if self._member_final(h, parent, plan) == ("sched", u)
            ]
            qualifier = [
                h for h in sched_members
                if map_h(self.family[h][0], i, u, R_star) is not None
            ]
            if not qualifier:
                post = ()
            else:
                k = len(prefix)
                pick = self.seed.below(len(qualifier), "hprime", k, _digest(parent))
                h_prime = qualifier[pick]
                row = self.family[h_prime][0].row(i, u)
                post = tuple(
                    h for h in sched_members if self.family[h][0].row(i, u) == row
                )
        self._sets[prefix] = post
        return post

    def _member_final(self, h_idx: int, prefix: tuple, plan: _SlotPlan):
        b = self._bundle(h_idx, prefix, plan.pre_corrupted, plan.pre_budget,
                         plan.pre_pending, plan.pre_round)
        return b[1] if b is not None else None

    # -- the per-slot plan -------------------------------------------------

    def _plan(self, prefix: tuple, view: AdversaryView) -> _SlotPlan:
        plan = self._plans.get(prefix)
        if plan is not None:
            return plan
        S = self._set_after(prefix)
        k = len(prefix) + 1
        i = view.round
        j = len(prefix) - (i - 1) * self.base_spec.params.n + 1
        if not S:
            raise EmptyConsistentSet(i, j)
        pre_corrupted = view.corrupted
        pre_budget = view.budget
        pick = self.seed.below(len(S), "hstar", k, _digest(prefix))
        hstar = S[pick]
        corrupts, final = self._bundle(hstar, prefix, pre_corrupted, pre_budget,
                                       view.pending, i)
        post_if_send = None
        if final[0] == "send":
            _, u, r_star = final
            H_star = self.family[hstar][0]
            row = H_star.row(i, u)
            post_if_send = tuple(
                h for h in S
                if self.family[h][0].row(i, u) == row
                and self._final_of(h, prefix, pre_corrupted, pre_budget, view.pending, i)
                == ("send", u, r_star)
            )
            final = ("send", u, r_star, H_star.entry(i, u, r_star))
        plan = _SlotPlan(hstar=hstar, corrupts=corrupts, final=final,
                         post_if_send=post_if_send,
                         pre_corrupted=pre_corrupted, pre_budget=pre_budget,
                         pre_pending=view.pending, pre_round=i)
        self._plans[prefix] = plan
        return plan

    def _final_of(self, h_idx, prefix, corrupted, budget, pending, round_):
        b = self._bundle(h_idx, prefix, corrupted, budget, pending, round_)
        return b[1] if b is not None else None

    # -- strategy interface -------------------------------------------------

    def decide(self, view: AdversaryView):
        prefix = tuple(view.entries)
        plan = self._plan(prefix, view)
        for u in plan.corrupts:
            if u not in view.corrupted:
                return Corrupt(u)
        if plan.final[0] == "sched":
            return ScheduleHonest(plan.final[1])
        _, u, _r, R_long = plan.final
        return SendAs(u, R_long)

    # -- reporting ----------------------------------------------------------

    def consistent_set(self, prefix: Sequence[TranscriptEntry]) -> ConsistentSet:
        prefix = tuple(prefix)
        members = self._set_after(prefix)
        n = self.base_spec.params.n
        k = len(prefix)
        return ConsistentSet(members=members,
                             position=(k // n + 1, k % n + 1),
                             history=Transcript(prefix))

    def set_size_trace(self, transcript: Transcript) -> tuple[int, ...]:
        return tuple(
            len(self._set_after(tuple(transcript.entries[:k])))
            for k in range(len(transcript.entries) + 1)
        )


def _digest(prefix: tuple) -> bytes:
    import hashlib

    blob = ";".join(f"{e.round},{e.party},{e.message},{int(e.corrupted)}" for e in prefix)
    return hashlib.blake2b(blob.encode(), digest_size=16).digest()


def reduction_adversary_adaptive(
    family: Sequence[tuple[MatrixH, object]],
    base_spec: ProtocolSpec,
    t: int,
    seed,
    shared_cache: Optional[_FamilyCache] = None,
) -> ReductionAdversary:
    """Fresh reduction adversary instance for one run (or one exact walk)."""
    return ReductionAdversary(family, base_spec, t, seed, shared_cache)


@dataclass(frozen=True)
class ReductionRun:
    transcript: Optional[Transcript]
    output: Optional[int]
    corrupted: frozenset[int]
    halted: bool
    set_sizes: tuple[int, ...]


def run_reduction_once(family, base_spec: ProtocolSpec, t: int, seed,
                       shared_cache: Optional[_FamilyCache] = None) -> ReductionRun:
    """One seeded reduction run, including the final consistent-set update.

    A run that completes but whose final set is empty is recorded as halted,
    matching the top hybrid level exactly.
    """
    from .core import run_with_adversary

    seed = _as_seed(seed)
    adv = reduction_adversary_adaptive(family, base_spec, t, seed.child("reduction"),
                                       shared_cache)
    try:
        run = run_with_adversary(base_spec, adv, t, seed.child("engine"))
    except EmptyConsistentSet:
        # partial trace: sizes up to the halt point are in the adversary's memo
        return ReductionRun(None, None, frozenset(), True, ())
    sizes = adv.set_size_trace(run.transcript)
    final = adv._set_after(tuple(run.transcript.entries))
    if not final:
        return ReductionRun(run.transcript, None, run.corrupted, True, sizes)
    return ReductionRun(run.transcript, run.output, run.corrupted, False, sizes)


# ---------------------------------------------------------------------------
# Static reduction
# ---------------------------------------------------------------------------


class StaticStrategy:
    """A static adversary: corrupts a fixed set up front, then delegates."""

    def __init__(self, corrupt_set: Sequence[int], inner):
        self.corrupt_set = frozenset(corrupt_set)
        self.inner = inner

    def decide(self, view: AdversaryView):
        waiting = self.corrupt_set - view.corrupted
        if waiting:
            return Corrupt(min(waiting))
        return self.inner.decide(view)


class _StaticReduction:
    """Corrupts T* up front, then runs the adaptive machinery over the
    restricted family (whose strategies' corruption decisions are pre-made)."""

    def __init__(self, t_star: frozenset[int], inner: ReductionAdversary):
        self.t_star = t_star
        self.inner = inner

    def decide(self, view: AdversaryView):
        waiting = self.t_star - view.corrupted
        if waiting:
            return Corrupt(min(waiting))
        return self.inner.decide(view)


def reduction_adversary_static(
    family: Sequence[tuple[MatrixH, StaticStrategy]],
    base_spec: ProtocolSpec,
    t: int,
    seed,
) -> tuple[frozenset[int], _StaticReduction, Sequence[tuple[MatrixH, StaticStrategy]]]:
    """Pick T* = argmax over corruption sets of how many family strategies
    use it (lexicographic tie-break), corrupt it up front, and run the
    reduction over the restricted family.

    Returns (T*, strategy, restricted family).
    """
    if not family:
        raise EmptyFamily("static reduction needs a nonempty family")
    counts: dict[tuple[int, ...], int] = {}
    for _H, strat in family:
        T = tuple(sorted(strat.corrupt_set))
        if len(T) > t:
            raise ShapeMismatch(f"strategy corrupts {len(T)} > t = {t} parties")
        counts[T] = counts.get(T, 0) + 1
    best = max(counts.items(), key=lambda kv: (kv[1], [-x for x in kv[0]]))
    # lexicographic tie-break: smallest set tuple among max counts
    top_count = best[1]
    t_star = min(T for T, c in counts.items() if c == top_count)
    restricted = [(H, s) for H, s in family if tuple(sorted(s.corrupt_set)) == t_star]
    inner = ReductionAdversary(restricted, base_spec, t, _as_seed(seed))
    return frozenset(t_star), _StaticReduction(frozenset(t_star), inner), restricted


# ---------------------------------------------------------------------------
# Hybrid experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HybridRun:
    """One seeded run of the level-k experiment: reduction for the first k
    slots, then an ideal completion with a uniformly drawn consistent matrix."""

    transcript: Optional[Transcript]
    output: Optional[int]
    halted: bool
    level: int
    chosen_member: Optional[int]


def hybrid_experiment(family, base_spec: ProtocolSpec, t: int, level: int,
                      seed, shared_cache: Optional[_FamilyCache] = None) -> HybridRun:
    """Level k: generate the reduction's first k slots and consistent set,
    draw H from the set, map the prefix, and finish as the compressed
    protocol against H's own adversary; output the H-image transcript.
    """
    p = base_spec.params
    if not (0 <= level <= p.slots):
        raise ValueError(f"level must be in [0, {p.slots}]")
    seed = _as_seed(seed)
    adv = reduction_adversary_adaptive(family, base_spec, t, seed.child("reduction"),
                                       shared_cache)
    engine_seed = seed.child("engine")
    from .core import _HonestDraws

    draws = _HonestDraws(base_spec, engine_seed)
    n, d = p.n, p.d
    entries: list[TranscriptEntry] = []
    corrupted: set[int] = set()
    # phase 1: reduction for the first `level` slots
    round_ = 1
    pending = set(range(1, n + 1))
    while len(entries) < level:
        view = AdversaryView(entries, frozenset(corrupted), t - len(corrupted),
                             frozenset(pending), round_, p)
        try:
            action = adv.decide(view)
        except EmptyConsistentSet:
            return HybridRun(None, None, True, level, None)
        if isinstance(action, Corrupt):
            corrupted.add(action.party)
            continue
        if isinstance(action, ScheduleHonest):
            u = action.party
            entries.append(TranscriptEntry(round_, u, draws.message(round_, u), False))
        else:
            entries.append(TranscriptEntry(round_, action.party, action.message, True))
            u = action.party
        pending.discard(u)
        if not pending and round_ < d:
            round_ += 1
            pending = set(range(1, n + 1))
    members = adv._set_after(tuple(entries))
    if not members:
        return HybridRun(None, None, True, level, None)
    chosen = members[seed.below(len(members), "hybrid-h")]
    H, strat = adv.family[chosen]
    short = map_transcript(H, tuple(entries))
    assert short is not None, "consistent members always map the history"
    # phase 2: complete the compressed protocol against A^H
    short_entries = list(short.entries)
    short_params = ProtocolParams(n=n, d=d, L=H.ell, m=p.m)
    while len(short_entries) < p.slots:
        view = AdversaryView(short_entries, frozenset(corrupted), t - len(corrupted),
                             frozenset(pending), round_, short_params)
        action = strat.decide(view)
        if isinstance(action, Corrupt):
            corrupted.add(action.party)
            continue
        if isinstance(action, ScheduleHonest):
            u = action.party
            r = engine_seed.bits(H.ell, "short", round_, u)
            short_entries.append(TranscriptEntry(round_, u, r, False))
        else:
            if action.message >= H.N:
                raise ShapeMismatch("short adversary sent an out-of-range message")
            short_entries.append(TranscriptEntry(round_, action.party, action.message, True))
            u = action.party
        pending.discard(u)
        if not pending and round_ < d:
            round_ += 1
            pending = set(range(1, n + 1))
    long_trans = lift_transcript(H, Transcript(tuple(short_entries)))
    return HybridRun(long_trans, base_spec.output_map(long_trans), False, level, chosen)


# ---------------------------------------------------------------------------
# Exact distributions of hybrid levels (grouped enumeration)
# ---------------------------------------------------------------------------

#: Outcome key for halted runs in exact hybrid distributions.
BOTTOM = ("halt",)


def hybrid_exact_distribution(family, base_spec: ProtocolSpec, t: int, level: int,
                              shared_cache: Optional[_FamilyCache] = None
                              ) -> dict[tuple, Fraction]:
    """Exact outcome distribution of the level-k experiment.

    Outcomes are full long transcripts (entry tuples) or BOTTOM for halted
    runs.  The enumeration branches over honest messages, groups the uniform
    matrix draws by their observable effect, and carries exact weights, so
    two levels can be compared by statistical distance with zero error.
    """
    p = base_spec.params
    if not (0 <= level <= p.slots):
        raise ValueError(f"level must be in [0, {p.slots}]")
    cache = shared_cache if shared_cache is not None else _FamilyCache()
    probe = ReductionAdversary(family, base_spec, t, RngSeed(0), cache)
    n, d, L = p.n, p.d, p.L
    ell = probe.ell
    fam = probe.family
    out: dict[tuple, Fraction] = {}

    def add(key: tuple, w: Fraction):
        out[key] = out.get(key, Fraction(0)) + w

    def complete_ideal(entries: list[TranscriptEntry], corrupted: frozenset,
                       members: tuple[int, ...], weight: Fraction,
                       round_: int, pending: frozenset):
        """Hybrid steps 2-4: draw H from the set, finish as the short protocol."""
        if not members:
            add(BOTTOM, weight)
            return
        w_h = weight / len(members)
        for h_idx in members:
            H, strat = fam[h_idx]
            short = map_transcript(H, tuple(entries))
            assert short is not None
            short_params = ProtocolParams(n=n, d=d, L=ell, m=p.m)
            short_entries = list(short.entries)

            def walk_short(round2: int, pending2: frozenset, corr2: frozenset, w: Fraction):
                if len(short_entries) == p.slots:
                    long_t = lift_transcript(H, Transcript(tuple(short_entries)))
                    add(("ok",) + tuple(long_t.entries), w)
                    return
                if not pending2:
                    walk_short(round2 + 1, frozenset(range(1, n + 1)), corr2, w)
                    return
                view = AdversaryView(short_entries, corr2, t - len(corr2),
                                     pending2, round2, short_params)
                action = strat.decide(view)
                if isinstance(action, Corrupt):
                    walk_short(round2, pending2, corr2 | {action.party}, w)
                elif isinstance(action, ScheduleHonest):
                    u = action.party
                    inv = Fraction(1, 1 << ell)
                    for r in range(1 << ell):
                        short_entries.append(TranscriptEntry(round2, u, r, False))
                        walk_short(round2, pending2 - {u}, corr2, w * inv)
                        short_entries.pop()
                else:
                    short_entries.append(TranscriptEntry(round2, action.party,
                                                         action.message, True))
                    walk_short(round2, pending2 - {action.party}, corr2, w)
                    short_entries.pop()

            walk_short(round_, pending, corrupted, w_h)

    def bundles_of(members, entries, corrupted, budget, pending, round_):
        probe_prefix = tuple(entries)
        result = {}
        for h in members:
            b = probe._bundle(h, probe_prefix, corrupted, budget, pending, round_)
            result[h] = b
        return result

    def walk(entries: list[TranscriptEntry], corrupted: frozenset,
             members: tuple[int, ...], weight: Fraction,
             round_: int, pending: frozenset):
        k = len(entries)
        if k == level:
            complete_ideal(entries, corrupted, members, weight, round_, pending)
            return
        if not members:
            add(BOTTOM, weight)
            return
        budget = t - len(corrupted)
        bundles = bundles_of(members, entries, corrupted, budget, pending, round_)
        # group the uniform H* draw by observable effect
        groups: dict[tuple, list[int]] = {}
        for h, b in bundles.items():
            corrupts, final = b
            if final[0] == "send":
                _, u, r_star = final
                row = fam[h][0].row(round_, u)
                key = (corrupts, "send", u, r_star, row)
            else:
                key = (corrupts, "sched", final[1])
            groups.setdefault(key, []).append(h)
        inv_s = Fraction(1, len(members))
        for key, grp in sorted(groups.items(), key=lambda kv: kv[0]):
            w_g = weight * len(grp) * inv_s
            corrupts = key[0]
            new_corr = corrupted | set(corrupts)
            if key[1] == "send":
                _, _, u, r_star, row = key
                R_long = row[r_star]
                post = tuple(h for h in members
                             if fam[h][0].row(round_, u) == row
                             and bundles[h][1] == ("send", u, r_star))
                entries.append(TranscriptEntry(round_, u, R_long, True))
                nxt_pending = pending - {u}
                nr, np_ = (round_, nxt_pending) if nxt_pending or round_ == d \
                    else (round_ + 1, frozenset(range(1, n + 1)))
                walk(entries, new_corr, post, w_g, nr, np_)
                entries.pop()
            else:
                _, _, u = key
                sched_members = [h for h in members if bundles[h][1] == ("sched", u)]
                inv_msg = Fraction(1, 1 << L)
                for R_star in range(1 << L):
                    qualifier = [h for h in sched_members
                                 if map_h(fam[h][0], round_, u, R_star) is not None]
                    entries.append(TranscriptEntry(round_, u, R_star, False))
                    nxt_pending = pending - {u}
                    nr, np_ = (round_, nxt_pending) if nxt_pending or round_ == d \
                        else (round_ + 1, frozenset(range(1, n + 1)))
                    if not qualifier:
                        walk(entries, new_corr, (), w_g * inv_msg, nr, np_)
                    else:
                        # group the uniform H' draw by the donated row
                        row_groups: dict[tuple, int] = {}
                        for h in qualifier:
                            row_groups[fam[h][0].row(round_, u)] = \
                                row_groups.get(fam[h][0].row(round_, u), 0) + 1
                        inv_q = Fraction(1, len(qualifier))
                        for row, cnt in sorted(row_groups.items()):
                            post = tuple(h for h in sched_members
                                         if fam[h][0].row(round_, u) == row)
                            walk(entries, new_corr, post,
                                 w_g * inv_msg * cnt * inv_q, nr, np_)
                    entries.pop()

    walk([], frozenset(), tuple(range(len(fam))), Fraction(1), 1,
         frozenset(range(1, n + 1)))
    return out


def reduction_exact_distribution(family, base_spec: ProtocolSpec, t: int,
                                 shared_cache: Optional[_FamilyCache] = None
                                 ) -> dict[tuple, Fraction]:
    """Exact outcome distribution of the full reduction run (top level)."""
    return hybrid_exact_distribution(family, base_spec, t, base_spec.params.slots,
                                     shared_cache)


def outcome_sd(a: dict[tuple, Fraction], b: dict[tuple, Fraction]) -> Fraction:
    keys = set(a) | set(b)
    return sum((abs(a.get(k, Fraction(0)) - b.get(k, Fraction(0))) for k in keys),
               Fraction(0)) / 2


# ---------------------------------------------------------------------------
# Simulation and security sweeps
# ---------------------------------------------------------------------------


def exact_output_distribution_of_short(spec: ProtocolSpec, H: MatrixH,
                                       cap: int = DEFAULT_ENUM_CAP) -> Distribution:
    return enumerate_honest_outputs(compressed_protocol(spec, H), cap=cap)


@dataclass(frozen=True)
class SimulationReport:
    """Per-matrix exact distances between compressed and base outputs."""

    ell: int
    sds: tuple[Fraction, ...]           # in sampling/enumeration order
    median: Fraction
    mean: Fraction
    quantile_two_thirds: Fraction
    fraction_below: dict[Fraction, Fraction]
    sampled: bool


def simulation_check(spec: ProtocolSpec, cp: CompressionParams,
                     thresholds: Sequence = (),
                     samples: Optional[int] = None,
                     seed=0,
                     cap: int = DEFAULT_ENUM_CAP) -> SimulationReport:
    """Exact SD(out of compressed, out of base) per matrix.

    Enumerates the whole family when ``samples`` is None (cap permitting);
    otherwise samples that many matrices uniformly.  Reports the SD
    distribution, its median and 2/3-quantile, and the fraction at or below
    each threshold.
    """
    base_dist = enumerate_honest_outputs(spec, cap=cap)
    sds: list[Fraction] = []
    if samples is None:
        matrices: Sequence[MatrixH] = list(enumerate_family(cp))
    else:
        seed = _as_seed(seed)
        matrices = [sample_matrix(cp, seed.child("simcheck", i)) for i in range(samples)]
    for H in matrices:
        dist_h = exact_output_distribution_of_short(spec, H, cap=cap)
        sds.append(statistical_distance(dist_h, base_dist))
    ordered = sorted(sds)
    count = len(ordered)
    if count % 2:
        median = ordered[count // 2]
    else:
        median = (ordered[count // 2 - 1] + ordered[count // 2]) / 2
    q23 = ordered[max(0, math.ceil(Fraction(2 * count, 3)) - 1)]
    fracs = {}
    for thr in thresholds:
        thr_f = Fraction(thr) if not isinstance(thr, Fraction) else thr
        fracs[thr_f] = Fraction(sum(1 for v in ordered if v <= thr_f), count)
    mean = sum(ordered, Fraction(0)) / count
    return SimulationReport(ell=cp.ell, sds=tuple(sds), median=median, mean=mean,
                            quantile_two_thirds=q23, fraction_below=fracs,
                            sampled=samples is not None)


@dataclass(frozen=True)
class IdentityCheckReport:
    """Outcome of the exhaustive bijective-row identity check at ell = L."""

    matrices_checked: int
    all_identical: bool


def bijective_identity_check(spec: ProtocolSpec, chunk_elems: int = 4_000_000,
                             cap: int = DEFAULT_ENUM_CAP) -> IdentityCheckReport:
    """Verify SD(out of compressed, out of base) = 0 for every matrix whose
    rows are bijections of the message space, at ell = L.

    At ell = L the short and long spaces have equal size and a common power
    of two as denominator, so exact SD = 0 is equivalent to equality of the
    integer output histograms, which is checked per matrix in pure integer
    arithmetic (vectorised over matrices for throughput).
    """
    import numpy as np

    p = spec.params
    K = 1 << p.L
    dn = p.slots
    if spec.universe is not None:
        raise ShapeMismatch("identity check applies to full-universe specs")
    n_codes = K ** dn
    if n_codes > cap:
        raise CapExceeded(n_codes, cap, "long enumeration")
    perms = list(_permutations(K))
    T = len(perms)
    total_matrices = T ** dn
    out_tab = np.empty(n_codes, dtype=np.int64)
    mask = K - 1
    for code in range(n_codes):
        msgs = [(code >> ((dn - 1 - s) * p.L)) & mask for s in range(dn)]
        trans = Transcript(tuple(
            TranscriptEntry(s // p.n + 1, s % p.n + 1, msgs[s], False)
            for s in range(dn)
        ))
        out_tab[code] = spec.output_map(trans)
    honest_counts = np.bincount(out_tab, minlength=1 << p.m)
    P = np.array(perms, dtype=np.int64)

    # vectorise over the largest suffix block that fits the element budget
    v = 1
    while v < dn and (T ** (v + 1)) * n_codes <= chunk_elems:
        v += 1
    suf = np.zeros((1, 1), dtype=np.int64)
    for _ in range(v):
        suf = ((suf[:, None, :, None] << p.L) | P[None, :, None, :]).reshape(
            suf.shape[0] * T, suf.shape[1] * K)
    import itertools as _it

    m_bits = p.m
    ok = True
    labels_base = (np.arange(T ** v, dtype=np.int64)[None, :, None] << m_bits)
    for combo in _it.product(range(T), repeat=dn - v):
        pre = np.zeros(1, dtype=np.int64)
        for pw in combo:
            pre = ((pre[:, None] << p.L) | P[pw][None, :]).ravel()
        codes = (pre[:, None, None] << (v * p.L)) | suf[None, :, :]
        labels = out_tab[codes] + labels_base
        counts = np.bincount(labels.ravel(), minlength=(T ** v) << m_bits)
        counts = counts.reshape(T ** v, 1 << m_bits)
        if not (counts == honest_counts[None, :]).all():
            ok = False
            break
    return IdentityCheckReport(matrices_checked=total_matrices, all_identical=ok)


def _permutations(K: int):
    import itertools as _it

    return _it.permutations(range(K))


@dataclass(frozen=True)
class SecuritySweepReport:
    """Optimal adaptive values for the base protocol and every matrix."""

    base_value: Fraction
    per_matrix: tuple[tuple[int, Fraction], ...]   # (matrix code, value)
    fraction_within: dict[Fraction, Fraction]      # slack -> fraction of H
    excess_cdf: tuple[tuple[Fraction, Fraction], ...]  # (excess, cumulative fraction)


def security_sweep(spec: ProtocolSpec, cp: CompressionParams, sec: SecurityParams,
                   slack_levels: Sequence = (0,),
                   solver_cap: int = 2**21) -> SecuritySweepReport:
    """Exact optimal adaptive bias for the base protocol and for the
    compressed protocol under every matrix in the family."""
    base_report, _ = optimal_adaptive_value(spec, sec, cap=solver_cap)
    per: list[tuple[int, Fraction]] = []
    for H in enumerate_family(cp):
        rep, _ = optimal_adaptive_value(compressed_protocol(spec, H), sec, cap=solver_cap)
        per.append((H.code, rep.value))
    diffs = sorted(v - base_report.value for _c, v in per)
    count = len(diffs)
    fracs = {}
    for slack in slack_levels:
        s = Fraction(slack) if not isinstance(slack, Fraction) else slack
        fracs[s] = Fraction(sum(1 for dv in diffs if dv <= s), count)
    cdf = []
    running = 0
    for dv in diffs:
        running += 1
        cdf.append((dv, Fraction(running, count)))
    dedup = {}
    for dv, frac in cdf:
        dedup[dv] = frac
    return SecuritySweepReport(
        base_value=base_report.value,
        per_matrix=tuple(per),
        fraction_within=fracs,
        excess_cdf=tuple(sorted(dedup.items())),
    )
