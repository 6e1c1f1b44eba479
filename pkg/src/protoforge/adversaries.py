"""Adversary strategies, the bias functional val, and an exact solver for
optimal adaptive adversaries on tiny instances.

val of a strategy against a target set M is the adversarial probability mass
on M minus the honest mass (signed; bad strategies can go negative and are
reported as such).  The solver performs backward induction over the
extensive-form game: max over legal adversary actions at decision points,
expectation over uniform messages at honest points.  Its result is the
supremum over all adaptive rushing strategies with the given budget.

A corrupted party's future slots are always filled by adversary SendAs, and
corruption is allowed at any decision point; in particular the adversary may
corrupt a party that already spoke this round purely to control later rounds
(the model never forbids it).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .core import (
    AdversaryAction,
    AdversaryView,
    Corrupt,
    DEFAULT_ENUM_CAP,
    ProtocolSpec,
    ScheduleHonest,
    SendAs,
    Transcript,
    TranscriptEntry,
    _as_seed,
    enumerate_honest_outputs,
    run_honest,
    run_with_adversary,
)
from .errors import CapExceeded, EmptyConsistentSet, InvalidTargetSet

DEFAULT_SOLVER_CAP = 2**21


# ---------------------------------------------------------------------------
# Security parameters and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SecurityParams:
    """Corruption budget t and explicit target set M (size s) with tolerance delta."""

    t: int
    M: tuple[int, ...]
    delta: Optional[Fraction] = None

    def __post_init__(self):
        object.__setattr__(self, "M", tuple(sorted(set(self.M))))
        if not self.M:
            raise InvalidTargetSet("target set M must be nonempty")
        if self.t < 0:
            raise InvalidTargetSet("t >= 0 required")

    @property
    def s(self) -> int:
        return len(self.M)

    def validate_for(self, spec: ProtocolSpec) -> None:
        if self.t > spec.params.n:
            raise InvalidTargetSet(f"t={self.t} exceeds n={spec.params.n}")
        top = 1 << spec.params.m
        if self.s > top:
            raise InvalidTargetSet(f"|M|={self.s} exceeds 2^m={top}")
        for z in self.M:
            if not (0 <= z < top):
                raise InvalidTargetSet(f"target {z} is not an {spec.params.m}-bit value")


@dataclass(frozen=True)
class ValueReport:
    """Signed bias toward M: adversarial mass minus honest mass.

    ``halted_mass`` is nonzero only for strategies that can abort a run
    (the reduction adversary); halted runs count as mass outside M here,
    and callers that need the renormalized figure compute it from this.
    """

    value: Fraction | float
    method: str
    honest_mass: Fraction | float
    halted_mass: Fraction | float = Fraction(0)
    radius: Optional[float] = None


# ---------------------------------------------------------------------------
# Built-in strategies
# ---------------------------------------------------------------------------


class DoNothingStrategy:
    """Schedules honest parties in ascending index order; never corrupts."""

    def decide(self, view: AdversaryView) -> AdversaryAction:
        return ScheduleHonest(min(view.pending))


class CorruptLastBiasing:
    """Corrupt the final speaker of the run and pick the message that lands
    the output in M (smallest such message; 0 if none works).

    Everyone else is scheduled honestly in ascending order.  The corruption
    happens immediately before the corrupted party's own slot, which the
    model explicitly allows.
    """

    def __init__(self, spec: ProtocolSpec, M: tuple[int, ...]):
        self.spec = spec
        self.M = frozenset(M)

    def decide(self, view: AdversaryView) -> AdversaryAction:
        last_slot = view.round == self.spec.params.d and len(view.pending) == 1
        if not last_slot:
            return ScheduleHonest(min(view.pending - view.corrupted))
        u = next(iter(view.pending))
        if u not in view.corrupted:
            if view.budget > 0:
                return Corrupt(u)
            return ScheduleHonest(u)
        for msg in range(1 << self.spec.params.L):
            trial = Transcript(tuple(view.entries) + (TranscriptEntry(view.round, u, msg, True),))
            if self.spec.output_map(trial) in self.M:
                return SendAs(u, msg)
        return SendAs(u, 0)


class GreedyMajorityStrategy:
    """Adaptive attack on the one-round majority protocol.

    Schedules honest parties one at a time and corrupts the next speaker
    (sending ``target_bit``) exactly when the running count makes every
    remaining slot pivotal, i.e. the target side still needs as many bits
    as there are speakers left.  Stops corrupting when the budget runs out.
    """

    def __init__(self, target_bit: int = 1):
        self.target = target_bit

    def decide(self, view: AdversaryView) -> AdversaryAction:
        owed = view.pending & view.corrupted
        if owed:
            return SendAs(min(owed), self.target)
        n = view.params.n
        count = sum(1 for e in view.entries if e.message == self.target)
        # ties go to 0, so the two targets need different counts at even n
        needed = (n // 2 + 1) if self.target == 1 else ((n + 1) // 2)
        need = needed - count
        remaining = len(view.pending)
        if view.budget > 0 and 0 < need == remaining:
            return Corrupt(min(view.pending))
        return ScheduleHonest(min(view.pending))


def make_greedy_majority_strategy(t: int, target_bit: int) -> GreedyMajorityStrategy:
    """The budget t is enforced by the engine; it is part of the run setup."""
    del t
    return GreedyMajorityStrategy(target_bit)


# ---------------------------------------------------------------------------
# Exact adversarial output distribution
# ---------------------------------------------------------------------------


def exact_adversarial_masses(
    spec: ProtocolSpec,
    strategy,
    t: int,
    cap: int = DEFAULT_ENUM_CAP,
) -> tuple[dict[int, Fraction], Fraction]:
    """Exact output masses of spec against a deterministic strategy.

    Branches over every honest message; the strategy must be a pure function
    of the view plus its own fixed seed.  Returns (masses, halted_mass):
    masses sum to 1 - halted_mass, where halted_mass collects runs the
    strategy aborted via EmptyConsistentSet.
    """
    total_states = spec.universe_size() ** spec.params.slots
    if total_states > cap:
        raise CapExceeded(total_states, cap, "honest enumeration")
    n, d = spec.params.n, spec.params.d
    universe = list(spec.universe_values())
    inv = Fraction(1, len(universe))
    counts: dict[int, Fraction] = {}
    halted = [Fraction(0)]
    entries: list[TranscriptEntry] = []

    def walk(round_: int, pending: frozenset[int], corrupted: frozenset[int], weight: Fraction):
        if not pending:
            if round_ == d:
                z = spec.output_map(Transcript(tuple(entries)))
                counts[z] = counts.get(z, Fraction(0)) + weight
                return
            walk(round_ + 1, frozenset(range(1, n + 1)), corrupted, weight)
            return
        view = AdversaryView(entries, corrupted, t - len(corrupted), pending, round_, spec.params)
        try:
            action = strategy.decide(view)
        except EmptyConsistentSet:
            halted[0] += weight
            return
        if isinstance(action, Corrupt):
            if action.party in corrupted or len(corrupted) >= t:
                raise InvalidTargetSet(f"illegal corrupt of party {action.party}")
            walk(round_, pending, corrupted | {action.party}, weight)
        elif isinstance(action, ScheduleHonest):
            u = action.party
            assert u in pending and u not in corrupted
            for msg in universe:
                entries.append(TranscriptEntry(round_, u, msg, False))
                walk(round_, pending - {u}, corrupted, weight * inv)
                entries.pop()
        else:
            u = action.party
            assert u in pending and u in corrupted
            entries.append(TranscriptEntry(round_, u, action.message, True))
            walk(round_, pending - {u}, corrupted, weight)
            entries.pop()

    walk(1, frozenset(range(1, n + 1)), frozenset(), Fraction(1))
    return dict(sorted(counts.items())), halted[0]


def value_of(
    spec: ProtocolSpec,
    strategy,
    sec: SecurityParams,
    mode: str = "exact",
    B: Optional[int] = None,
    seed=None,
    cap: int = DEFAULT_ENUM_CAP,
) -> ValueReport:
    """Bias of a concrete strategy toward sec.M.

    Exact mode enumerates all honest randomness with the adversary
    determinized per branch.  Sampled mode runs B seeded executions and
    reports a two-sided Chernoff 95% confidence radius.
    """
    sec.validate_for(spec)
    M = set(sec.M)
    if mode == "exact":
        counts, halted = exact_adversarial_masses(spec, strategy, sec.t, cap)
        adv_mass = sum((w for z, w in counts.items() if z in M), Fraction(0))
        honest_mass = enumerate_honest_outputs(spec, cap=cap).mass_of_set(M)
        return ValueReport(value=adv_mass - honest_mass, method="exact-enumeration",
                           honest_mass=honest_mass, halted_mass=halted)
    if mode == "sampled":
        if not B or B < 1:
            raise ValueError("sampled mode requires B >= 1")
        seed = _as_seed(seed if seed is not None else 0)
        hits = 0
        halted_runs = 0
        for i in range(B):
            try:
                run = run_with_adversary(spec, strategy, sec.t, seed.child("adv", i))
            except EmptyConsistentSet:
                halted_runs += 1
                continue
            if run.output in M:
                hits += 1
        adv_mass = hits / B
        try:
            honest_mass = float(enumerate_honest_outputs(spec, cap=cap).mass_of_set(M))
        except CapExceeded:
            honest_hits = sum(1 for i in range(B)
                              if run_honest(spec, seed.child("honest", i)).output in M)
            honest_mass = honest_hits / B
        radius = math.sqrt(3.0 * math.log(2 / 0.05) / B)
        return ValueReport(value=adv_mass - honest_mass,
                           method=f"monte-carlo(B={B}, confidence=0.95)",
                           honest_mass=honest_mass, halted_mass=halted_runs / B,
                           radius=radius)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Optimal adaptive adversary (backward induction)
# ---------------------------------------------------------------------------


def _solver_state_bound(spec: ProtocolSpec, t: int) -> int:
    base = spec.params.n * (1 << spec.params.L)
    prefixes = 0
    term = 1
    for _ in range(spec.params.slots + 1):
        prefixes += term
        if prefixes > 2**62:
            return 2**62
        term *= base
    return prefixes * (2 ** spec.params.n) * (t + 1)


@dataclass(frozen=True)
class OptimalPolicy:
    """Argmax policy from the solver, keyed by canonical decision state."""

    actions: dict
    spec_label: str
    t: int
    M: tuple[int, ...]


def optimal_adaptive_value(
    spec: ProtocolSpec,
    sec: SecurityParams,
    cap: int = DEFAULT_SOLVER_CAP,
) -> tuple[ValueReport, OptimalPolicy]:
    """Exact optimal bias toward sec.M over all adaptive rushing adversaries
    with budget sec.t, plus the argmax strategy table.

    Backward induction with memoization on (transcript prefix, corrupted set,
    remaining budget).  SendAs ranges over all 2^L messages even when honest
    draws are universe-restricted.  Refuses instances whose state-count
    estimate exceeds the cap.
    """
    sec.validate_for(spec)
    estimate = _solver_state_bound(spec, sec.t)
    if estimate > cap:
        raise CapExceeded(estimate, cap, "game-tree")
    n, d = spec.params.n, spec.params.d
    universe = list(spec.universe_values())
    inv = Fraction(1, len(universe))
    M = frozenset(sec.M)
    memo: dict = {}
    policy: dict = {}
    entries: list[TranscriptEntry] = []

    def solve(round_: int, pending: frozenset[int], corrupted: frozenset[int], budget: int) -> Fraction:
        if not pending:
            if round_ == d:
                return Fraction(1) if spec.output_map(Transcript(tuple(entries))) in M else Fraction(0)
            return solve(round_ + 1, frozenset(range(1, n + 1)), corrupted, budget)
        key = (tuple(entries), corrupted, budget)
        hit = memo.get(key)
        if hit is not None:
            return hit[0]
        best: Optional[Fraction] = None
        best_action: Optional[AdversaryAction] = None
        if budget > 0:
            for u in sorted(set(range(1, n + 1)) - corrupted):
                v = solve(round_, pending, corrupted | {u}, budget - 1)
                if best is None or v > best:
                    best, best_action = v, Corrupt(u)
        for u in sorted(pending - corrupted):
            acc = Fraction(0)
            for msg in universe:
                entries.append(TranscriptEntry(round_, u, msg, False))
                acc += solve(round_, pending - {u}, corrupted, budget)
                entries.pop()
            v = acc * inv
            if best is None or v > best:
                best, best_action = v, ScheduleHonest(u)
        for u in sorted(pending & corrupted):
            for msg in range(1 << spec.params.L):
                entries.append(TranscriptEntry(round_, u, msg, True))
                v = solve(round_, pending - {u}, corrupted, budget)
                entries.pop()
                if best is None or v > best:
                    best, best_action = v, SendAs(u, msg)
        assert best is not None and best_action is not None
        memo[key] = (best, best_action)
        policy[key] = best_action
        return best

    top = solve(1, frozenset(range(1, n + 1)), frozenset(), sec.t)
    honest_mass = enumerate_honest_outputs(spec).mass_of_set(set(sec.M))
    report = ValueReport(value=top - honest_mass, method="game-tree", honest_mass=honest_mass)
    return report, OptimalPolicy(actions=dict(policy), spec_label=spec.label,
                                 t=sec.t, M=sec.M)


# ---------------------------------------------------------------------------
# Policy export / replay
# ---------------------------------------------------------------------------


def view_state_hash(entries, corrupted, budget) -> str:
    """Canonical hash of an adversary decision state, stable across runs."""
    parts = [f"{e.round},{e.party},{e.message},{int(e.corrupted)}" for e in entries]
    blob = ";".join(parts) + "|" + ",".join(map(str, sorted(corrupted))) + "|" + str(budget)
    return hashlib.sha256(blob.encode()).hexdigest()


def _action_to_json(action: AdversaryAction) -> dict:
    if isinstance(action, Corrupt):
        return {"type": "corrupt", "party": action.party}
    if isinstance(action, ScheduleHonest):
        return {"type": "schedule", "party": action.party}
    return {"type": "send", "party": action.party, "message": action.message}


def _action_from_json(obj: dict) -> AdversaryAction:
    kind = obj["type"]
    if kind == "corrupt":
        return Corrupt(obj["party"])
    if kind == "schedule":
        return ScheduleHonest(obj["party"])
    if kind == "send":
        return SendAs(obj["party"], obj["message"])
    raise ValueError(f"unknown action type {kind!r}")


def policy_to_json(policy: OptimalPolicy) -> str:
    table = {}
    for (entries, corrupted, budget), action in policy.actions.items():
        table[view_state_hash(entries, corrupted, budget)] = _action_to_json(action)
    doc = {
        "spec": policy.spec_label,
        "t": policy.t,
        "M": list(policy.M),
        "table": dict(sorted(table.items())),
    }
    return json.dumps(doc, indent=2, sort_keys=True)


class TablePolicyStrategy:
    """Replays an exported deterministic policy file."""

    def __init__(self, doc: str | dict):
        if isinstance(doc, str):
            doc = json.loads(doc)
        self.table = {k: _action_from_json(v) for k, v in doc["table"].items()}

    def decide(self, view: AdversaryView) -> AdversaryAction:
        h = view_state_hash(view.entries, view.corrupted, view.budget)
        if h not in self.table:
            raise KeyError(f"no action recorded for state {h}")
        return self.table[h]
