"""Discrete-time ledger state-space engine.

A ledger is a global state ``X`` partitioned into local states declared by
accounts, an ordered log of applied transactions ``T`` and a block height
``K``.  Agents act on the state only through registered mechanisms; a block
is the left fold of its transactions, and a trajectory is the closed-loop
sequence of blocks produced by evaluating policies on the pre-block state.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
import operator
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping, NamedTuple, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

AddressId = str
MechanismId = str
VarKey = str  # "owner/name"; see var_key


class Unit(str, enum.Enum):
    XNS = "XNS"
    USD = "USD"
    COUNT = "count"
    RATE = "rate"
    # running totals of XNS flows; not balances, excluded from supply
    XNS_TALLY = "XNS-tally"


class EngineError(Exception):
    pass


class PartitionError(EngineError):
    """A state variable was declared twice under the same (owner, name)."""


class RegistrationError(EngineError):
    pass


class ObservationError(KeyError):
    """A policy read a variable outside its observation filter."""


def var_key(owner: AddressId, name: str) -> VarKey:
    """Index of a state variable: the declaring account plus a local name."""
    return f"{owner}/{name}"


def split_key(key: VarKey) -> tuple:
    owner, _, name = key.partition("/")
    return owner, name


@dataclass(frozen=True)
class StateVar:
    owner: AddressId
    controller: AddressId
    name: str
    value: float
    unit: Unit = Unit.XNS

    def __post_init__(self):
        if "/" in self.owner:
            raise ValueError(f"owner id may not contain '/': {self.owner!r}")

    @property
    def key(self) -> VarKey:
        return var_key(self.owner, self.name)


def tuple_getter(keys: Sequence) -> Callable[[Mapping], tuple]:
    """``itemgetter`` that always returns a tuple, even for 0 or 1 keys."""
    if len(keys) == 0:
        return lambda d: ()
    if len(keys) == 1:
        key = keys[0]
        return lambda d: (d[key],)
    return operator.itemgetter(*keys)


class _Schema:
    # key -> (controller, unit); shared by every state that derives from it
    # without declaring new variables
    __slots__ = ("meta", "_xns_keys", "_xns_get", "_by_controller", "_declared",
                 "_controlled")

    def __init__(self, meta: dict):
        self.meta = meta
        self._xns_keys = None
        self._xns_get = None
        self._by_controller = None
        # key tuples already checked against this schema, by identity; the
        # tuple is stored so its id cannot be reused while cached
        self._declared: dict = {}
        self._controlled: dict = {}

    def declares_all(self, keys: Sequence[VarKey]) -> bool:
        if type(keys) is tuple and self._declared.get(id(keys)) is keys:
            return True
        meta = self.meta
        for k in keys:
            if k not in meta:
                return False
        if type(keys) is tuple:
            self._declared[id(keys)] = keys
        return True

    def controls_all(self, agent: AddressId, keys: Iterable[VarKey]) -> bool:
        cacheable = type(keys) is tuple
        if cacheable:
            seen = self._controlled.get(agent)
            if seen is None:
                seen = self._controlled[agent] = {}
            elif seen.get(id(keys)) is keys:
                return True
        if not self.controlled_by(agent).issuperset(keys):
            return False
        if cacheable:
            seen[id(keys)] = keys
        return True

    def controlled_by(self, agent: AddressId) -> frozenset:
        if self._by_controller is None:
            index: dict = {}
            for k, (c, _) in self.meta.items():
                index.setdefault(c, set()).add(k)
            self._by_controller = {c: frozenset(ks) for c, ks in index.items()}
        return self._by_controller.get(agent, frozenset())

    @property
    def xns_keys(self) -> tuple:
        if self._xns_keys is None:
            self._xns_keys = tuple(k for k, (_, u) in self.meta.items() if u is Unit.XNS)
        return self._xns_keys

    def extend(self, meta: dict, created: Sequence[VarKey]) -> "_Schema":
        """Schema for ``meta``, which is this schema's map plus ``created``.

        Indexes already built here are carried over and extended rather
        than rebuilt from scratch.
        """
        child = _Schema(meta)
        if self._by_controller is not None:
            index = dict(self._by_controller)
            added: dict = {}
            for k in created:
                added.setdefault(meta[k][0], []).append(k)
            for c, ks in added.items():
                index[c] = index.get(c, frozenset()).union(ks)
            child._by_controller = index
        if self._xns_keys is not None:
            child._xns_keys = self._xns_keys + tuple(k for k in created if meta[k][1] is Unit.XNS)
        return child

    @property
    def xns_values(self) -> Callable[[Mapping], tuple]:
        if self._xns_get is None:
            self._xns_get = tuple_getter(self.xns_keys)
        return self._xns_get


class GlobalState:
    """Immutable global state.  Every update returns a new instance."""

    __slots__ = ("_values", "_schema")

    def __init__(self, variables: Iterable[StateVar] = ()):
        values: dict = {}
        meta: dict = {}
        for var in variables:
            _check_declaration(meta, var)
            values[var.key] = float(var.value)
            meta[var.key] = (var.controller, Unit(var.unit))
        self._values = values
        self._schema = _Schema(meta)

    @classmethod
    def _raw(cls, values: dict, schema: _Schema) -> "GlobalState":
        obj = object.__new__(cls)
        obj._values = values
        obj._schema = schema
        return obj

    def __getitem__(self, key: VarKey) -> float:
        return self._values[key]

    def __contains__(self, key: object) -> bool:
        return key in self._values

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self) -> Iterator[VarKey]:
        return iter(self._values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GlobalState):
            return NotImplemented
        return self._values == other._values and self._schema.meta == other._schema.meta

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"GlobalState({len(self._values)} vars)"

    @property
    def values(self) -> Mapping:
        """The underlying ``{(owner, name): value}`` mapping.  Do not mutate."""
        return self._values

    def get(self, key: VarKey, default: float = 0.0) -> float:
        return self._values.get(key, default)

    def keys(self):
        return self._values.keys()

    def items(self):
        return self._values.items()

    def controller(self, key: VarKey) -> AddressId:
        return self._schema.meta[key][0]

    def unit(self, key: VarKey) -> Unit:
        return self._schema.meta[key][1]

    def var(self, key: VarKey) -> StateVar:
        controller, unit = self._schema.meta[key]
        owner, name = split_key(key)
        return StateVar(owner, controller, name, self._values[key], unit)

    def local_state(self, owner: AddressId) -> dict:
        prefix = owner + "/"
        return {k: v for k, v in self._values.items() if k.startswith(prefix)}

    def total(self, unit: Unit = Unit.XNS) -> float:
        """Exactly rounded sum of every variable carrying ``unit``."""
        if unit is Unit.XNS:
            return math.fsum(self._schema.xns_values(self._values))
        keys = [k for k, (_, u) in self._schema.meta.items() if u is unit]
        return math.fsum(map(self._values.__getitem__, keys))

    def declare(self, *variables: StateVar) -> "GlobalState":
        return self.evolve({}, variables)

    def evolve(self, writes: Mapping[VarKey, float], creates: Sequence[StateVar] = (),
               bulk: Sequence[tuple] = ()) -> "GlobalState":
        """New state with ``writes`` (and ``bulk`` ``(keys, values)`` pairs) applied."""
        new = GlobalState._raw(self._values.copy(), self._schema)
        new._absorb(writes, creates, bulk)
        return new

    def apply_effect(self, effect: "Effect") -> "GlobalState":
        return self.evolve(effect.writes, effect.creates, effect.bulk)

    def _absorb(self, writes: Mapping[VarKey, float], creates: Sequence[StateVar] = (),
                bulk: Sequence[tuple] = ()) -> None:
        # in-place update, only for states not yet visible outside the engine;
        # all checks run before anything is mutated
        values = self._values
        for keys, vals in bulk:
            if len(keys) != len(vals):
                raise EngineError(f"bulk write of {len(vals)} values to {len(keys)} variables")
        if creates:
            meta = self._schema.meta.copy()
            for var in creates:
                _check_declaration(meta, var)
                meta[var.key] = (var.controller, Unit(var.unit))
            known = meta.keys()
        else:
            known = values.keys()
        if not writes.keys() <= known:
            missing = sorted(set(writes) - set(known))
            raise EngineError(f"write to undeclared variable {missing[0]!r}")
        for keys, _ in bulk:
            if not (self._schema.declares_all(keys) or all(k in known for k in keys)):
                missing = sorted(k for k in keys if k not in known)
                raise EngineError(f"write to undeclared variable {missing[0]!r}")
        if creates:
            self._schema = self._schema.extend(meta, [var.key for var in creates])
            for var in creates:
                values[var.key] = float(var.value)
        values.update(writes)
        for keys, vals in bulk:
            values.update(zip(keys, vals))


def _check_declaration(meta: dict, var: StateVar) -> None:
    if var.key in meta:
        raise PartitionError(f"variable {var.name!r} already declared by {var.owner!r}")
    if Unit(var.unit) is Unit.XNS and var.value < 0:
        raise EngineError(f"negative token balance for {var.key!r}")


class Effect(NamedTuple):
    """Writes (and new declarations) produced by one mechanism application.

    ``bulk`` holds ``(keys, values)`` pairs, equivalent to adding
    ``dict(zip(keys, values))`` to ``writes`` but cheaper for wide updates
    such as one value per developer wallet.
    """

    writes: Mapping
    creates: tuple = ()
    bulk: tuple = ()

    def written_keys(self) -> list:
        keys = list(self.writes)
        for ks, _ in self.bulk:
            keys.extend(ks)
        return keys


@dataclass(frozen=True)
class Mechanism:
    """A declared state-transition operator.

    ``effect(state, action)`` must be deterministic and touch only the keys it
    returns.  ``check(state, agent, action)`` returns a rejection reason or
    ``None``.  ``controlled(state, action)`` lists the variables the agent
    must control; by default every written variable.
    """

    id: MechanismId
    effect: Callable[[GlobalState, Any], Effect]
    action_type: type = object
    check: Optional[Callable[[GlobalState, AddressId, Any], Optional[str]]] = None
    controlled: Optional[Callable[[GlobalState, Any], Iterable[VarKey]]] = None
    declared_by: Optional[AddressId] = None

    def transition(self, state: GlobalState, action: Any) -> GlobalState:
        return state.apply_effect(self.effect(state, action))


class Transaction(NamedTuple):
    agent: AddressId
    mechanism: MechanismId
    action: Any


# skips the generated keyword-handling constructor in the policy loop
_new_transaction = functools.partial(tuple.__new__, Transaction)


class Reason(str, enum.Enum):
    UNKNOWN_MECHANISM = "unknown-mechanism"
    UNAUTHORIZED = "unauthorized"
    MECHANISM_INVALID = "mechanism-invalid"


class Verdict(NamedTuple):
    accepted: bool
    reason: Optional[Reason] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Verdict(True)


class Commutation(NamedTuple):
    commutes: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.commutes


class ObservedState(Mapping):
    """Read-only view of the variables a policy is allowed to see."""

    __slots__ = ("_state", "_visible")

    def __init__(self, state: GlobalState, visible: Optional[Callable[[VarKey], bool]]):
        self._state = state
        self._visible = visible

    def __getitem__(self, key: VarKey) -> float:
        if self._visible is not None and not self._visible(key):
            raise ObservationError(key)
        return self._state[key]

    def __iter__(self):
        if self._visible is None:
            return iter(self._state)
        return (k for k in self._state if self._visible(k))

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def __contains__(self, key: object) -> bool:
        return key in self._state and (self._visible is None or self._visible(key))


def observe_owners(*owners: AddressId) -> Callable[[VarKey], bool]:
    allowed = frozenset(owners)
    return lambda key: key.partition("/")[0] in allowed


def observe_keys(*keys: VarKey) -> Callable[[VarKey], bool]:
    allowed = frozenset(keys)
    return allowed.__contains__


@dataclass
class Policy:
    """An agent's state-dependent strategy over one mechanism.

    ``strategy(observed, params, rng)`` returns an action or ``None``.  It is
    evaluated only on steps divisible by ``monitoring_interval``.
    ``params`` holds the agent's private signals and goals; the engine never
    looks inside.
    """

    agent: AddressId
    mechanism: MechanismId
    strategy: Callable[[ObservedState, Any, np.random.Generator], Any]
    monitoring_interval: int = 1
    observes: Optional[Callable[[VarKey], bool]] = None
    params: Any = None

    def __post_init__(self):
        if self.monitoring_interval < 1:
            raise ValueError("monitoring_interval must be >= 1")


@dataclass
class EnvNoise:
    """Seeded source for the exogenous stochastic processes.

    One stream per (seed, run); the engine consumes it step by step in a
    fixed order, so every draw is a function of (seed, run, step).
    """

    seed: int
    run: int = 0
    _rng: Optional[np.random.Generator] = field(default=None, init=False, repr=False)

    def rng(self, step: int) -> np.random.Generator:
        if self._rng is None:
            self._rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.run]))
        return self._rng


class _BlockLog(NamedTuple):
    block: tuple
    prev: Optional["_BlockLog"]


@dataclass(frozen=True)
class LedgerState:
    X: GlobalState
    K: int = 0
    log: Optional[_BlockLog] = field(default=None, repr=False, compare=False)

    @property
    def blocks(self) -> list:
        out = []
        node = self.log
        while node is not None:
            out.append(node.block)
            node = node.prev
        out.reverse()
        return out

    @property
    def T(self) -> tuple:
        return tuple(tx for block in self.blocks for tx in block)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LedgerState):
            return NotImplemented
        return self.K == other.K and self.X == other.X and self.blocks == other.blocks


def _control_violation(state: GlobalState, agent: AddressId, keys: Iterable[VarKey]) -> Optional[Verdict]:
    schema = state._schema
    if schema.controls_all(agent, keys):
        return None
    for key in keys:
        entry = schema.meta.get(key)
        if entry is None:
            return Verdict(False, Reason.MECHANISM_INVALID, f"undeclared variable {key!r}")
        if entry[0] != agent:
            return Verdict(False, Reason.UNAUTHORIZED, f"{agent!r} does not control {key!r}")
    return None


def _negative_balance(state: GlobalState, items: Iterable[tuple]) -> Optional[Verdict]:
    meta = state._schema.meta
    for key, value in items:
        if value < 0 and meta.get(key, (None, None))[1] is Unit.XNS:
            return Verdict(False, Reason.MECHANISM_INVALID, f"negative balance for {key!r}")
    return None


class BlockResult(NamedTuple):
    state: GlobalState
    accepted: tuple
    rejected: tuple  # (tx, Verdict) pairs


class Engine:
    """Mechanism registry plus the state-transition operations over it."""

    def __init__(self, mechanisms: Iterable[Mechanism] = ()):
        self._mechanisms: dict = {}
        for m in mechanisms:
            self.register_mechanism(m)

    def register_mechanism(self, mechanism: Mechanism) -> MechanismId:
        if mechanism.id in self._mechanisms:
            raise RegistrationError(f"mechanism {mechanism.id!r} already registered")
        self._mechanisms[mechanism.id] = mechanism
        return mechanism.id

    def mechanism(self, mechanism_id: MechanismId) -> Mechanism:
        return self._mechanisms[mechanism_id]

    def __contains__(self, mechanism_id: object) -> bool:
        return mechanism_id in self._mechanisms

    @property
    def mechanism_ids(self) -> tuple:
        return tuple(self._mechanisms)

    def validate_transaction(self, state: GlobalState, tx: Transaction) -> Verdict:
        return self._evaluate(state, tx)[1]

    def _evaluate(self, state: GlobalState, tx: Transaction):
        """Return ``(effect or None, verdict)`` for ``tx`` against ``state``."""
        agent, mech_id, action = tx
        mech = self._mechanisms.get(mech_id)
        if mech is None:
            return None, Verdict(False, Reason.UNKNOWN_MECHANISM, mech_id)
        if not isinstance(action, mech.action_type):
            return None, Verdict(False, Reason.MECHANISM_INVALID,
                                 f"{type(action).__name__} is not a legal action for {mech.id}")
        controlled = mech.controlled
        if controlled is not None:
            denied = _control_violation(state, agent, controlled(state, action))
            if denied is not None:
                return None, denied
        if mech.check is not None:
            why = mech.check(state, agent, action)
            if why is not None:
                return None, Verdict(False, Reason.MECHANISM_INVALID, why)
        eff = mech.effect(state, action)
        writes, _, bulk = eff
        if controlled is None:
            denied = _control_violation(state, agent, eff.written_keys() if bulk else writes.keys())
            if denied is not None:
                return None, denied
        if writes and min(writes.values()) < 0:
            denied = _negative_balance(state, writes.items())
            if denied is not None:
                return None, denied
        for keys, vals in bulk:
            if vals and min(vals) < 0:
                denied = _negative_balance(state, zip(keys, vals))
                if denied is not None:
                    return None, denied
        return eff, ACCEPT

    def _try_apply(self, state: GlobalState, tx: Transaction):
        eff, verdict = self._evaluate(state, tx)
        if not verdict:
            return state, verdict
        try:
            return state.apply_effect(eff), verdict
        except EngineError as exc:
            return state, Verdict(False, Reason.MECHANISM_INVALID, str(exc))

    def apply_transaction(self, state: GlobalState, tx: Transaction) -> GlobalState:
        """Apply one transaction; a rejected transaction returns ``state`` itself."""
        new, verdict = self._try_apply(state, tx)
        if not verdict:
            logger.info("rejected %s: %s (%s)", tx, verdict.reason.value, verdict.detail)
        return new

    def execute_block(self, state: GlobalState, txs: Iterable[Transaction]) -> BlockResult:
        """Left fold of ``txs`` over ``state``; invalid transactions are skipped.

        The fold runs on one private copy of the state, so intermediate
        states are never materialised.
        """
        work = GlobalState._raw(state._values.copy(), state._schema)
        evaluate = self._evaluate
        absorb = work._absorb
        accepted = []
        rejected = []
        for tx in txs:
            eff, verdict = evaluate(work, tx)  # eff is None exactly when rejected
            if eff is not None:
                try:
                    absorb(*eff)
                    accepted.append(tx)
                    continue
                except EngineError as exc:
                    verdict = Verdict(False, Reason.MECHANISM_INVALID, str(exc))
            logger.info("rejected %s: %s (%s)", tx, verdict.reason.value, verdict.detail)
            rejected.append((tx, verdict))
        return BlockResult(work if accepted else state, tuple(accepted), tuple(rejected))

    def apply_block(self, state: GlobalState, txs: Iterable[Transaction]) -> GlobalState:
        return self.execute_block(state, txs).state

    def commutes(self, state: GlobalState, tx_a: Transaction, tx_b: Transaction) -> Commutation:
        orders = {"ab": (tx_a, tx_b), "ba": (tx_b, tx_a)}
        finals = {}
        for label, (first, second) in orders.items():
            s1, v1 = self._try_apply(state, first)
            if not v1:
                return Commutation(False, f"order {label}: first tx {v1.reason.value}")
            s2, v2 = self._try_apply(s1, second)
            if not v2:
                return Commutation(False, f"order {label}: second tx {v2.reason.value}")
            finals[label] = s2
        if finals["ab"] == finals["ba"]:
            return Commutation(True)
        return Commutation(False, "final states differ")

    def evaluate_policies(self, state: GlobalState, policies: Sequence[Policy], step: int,
                          noise: Optional[EnvNoise]) -> list:
        rng = noise.rng(step) if noise is not None else None
        txs = []
        for policy in policies:
            if step % policy.monitoring_interval:
                continue
            action = policy.strategy(ObservedState(state, policy.observes), policy.params, rng)
            if action is not None:
                txs.append(_new_transaction((policy.agent, policy.mechanism, action)))
        return txs

    def step_ledger(self, ledger: LedgerState, policies: Sequence[Policy],
                    noise: Optional[EnvNoise] = None) -> LedgerState:
        txs = self.evaluate_policies(ledger.X, policies, ledger.K, noise)
        result = self.execute_block(ledger.X, txs)
        return LedgerState(result.state, ledger.K + 1, _BlockLog(result.accepted, ledger.log))

    def iter_trajectory(self, genesis: LedgerState, policies: Sequence[Policy], steps: int,
                        noise: Optional[EnvNoise] = None) -> Iterator[LedgerState]:
        if steps < 0:
            raise ValueError("steps must be >= 0")
        ledger = genesis
        yield ledger
        for _ in range(steps):
            ledger = self.step_ledger(ledger, policies, noise)
            yield ledger

    def run_trajectory(self, genesis: LedgerState, policies: Sequence[Policy], steps: int,
                       noise: Optional[EnvNoise] = None) -> list:
        return list(self.iter_trajectory(genesis, policies, steps, noise))

    def replay(self, genesis: GlobalState, ledger: LedgerState) -> GlobalState:
        """Rebuild ``ledger.X`` by applying its transaction log to ``genesis``."""
        state = genesis
        for block in ledger.blocks:
            result = self.execute_block(state, block)
            if result.rejected:
                raise EngineError(f"replay rejected {len(result.rejected)} logged transactions")
            state = result.state
        return state


# -- standard token transfer -------------------------------------------------

class Transfer(NamedTuple):
    source: AddressId
    dest: AddressId
    amount: float


def transfer_mechanism(mechanism_id: MechanismId = "transfer", balance: str = "xns",
                       declared_by: Optional[AddressId] = None) -> Mechanism:
    """Move ``amount`` of the ``balance`` variable between two accounts.

    Only the debited balance needs the agent's control; crediting is open.
    """

    def effect(state: GlobalState, a: Transfer) -> Effect:
        src, dst = var_key(a.source, balance), var_key(a.dest, balance)
        if a.amount == 0 or src == dst:
            return Effect({})
        return Effect({src: state[src] - a.amount, dst: state[dst] + a.amount})

    def check(state: GlobalState, agent: AddressId, a: Transfer) -> Optional[str]:
        if var_key(a.dest, balance) not in state:
            return f"unknown destination {a.dest!r}"
        if not a.amount >= 0:
            return "negative amount"
        if a.amount > state[var_key(a.source, balance)]:
            return "insufficient balance"
        return None

    def controlled(state: GlobalState, a: Transfer):
        return (var_key(a.source, balance),)

    return Mechanism(mechanism_id, effect, Transfer, check, controlled, declared_by)
