"""Architectural model: a small 32-bit load/compute ISA.

The machine has a register file, disjoint instruction and data memories
(Harvard layout), TSX-style transactional regions whose register effects
roll back on a faulting load, a fixed accessibility predicate that splits
the address space into user and kernel memory, and an architecturally
visible cache.  Cache contents evolve nondeterministically: on every step
the environment may insert or evict any set of accessible, value-correct
lines.  The `in-cache` instruction queries cache membership and is the
covert channel the microarchitectural model is audited against.
"""

from __future__ import annotations

from dataclasses import dataclass

MASK32 = 0xFFFF_FFFF
REG_COUNT = 12

# op -> (has rd, register sources, immediate operand position)
# Operand shapes for parsing/validation; see Instr.
OP_SHAPES = {
    "halt": (False, 0, False),
    "noop": (False, 0, False),
    "loadi": (True, 0, True),
    "addi": (True, 1, True),
    "add": (True, 2, False),
    "mul": (True, 2, False),
    "and": (True, 2, False),
    "cmp": (True, 2, False),
    "jg": (False, 1, True),
    "jge": (False, 1, True),
    "ldri": (True, 1, True),
    "ldr": (True, 2, False),
    "tsx-start": (False, 0, True),
    "tsx-end": (False, 0, False),
    "in-cache": (True, 2, False),
}


class ChoiceError(ValueError):
    """An invalid nondeterministic choice (bad cache line or fetch count)."""


def w32(x: int) -> int:
    return x & MASK32


def compare(a: int, b: int) -> int:
    """1 if a = b, 2 if a > b, 0 otherwise."""
    if a == b:
        return 1
    if a > b:
        return 2
    return 0


@dataclass(frozen=True, slots=True)
class Instr:
    """One instruction; unused operand fields are None."""

    op: str
    rd: int | None = None
    r1: int | None = None
    r2: int | None = None
    imm: int | None = None

    def render(self) -> str:
        parts = [self.op]
        if self.rd is not None:
            parts.append(f"r{self.rd}")
        if self.r1 is not None:
            parts.append(f"r{self.r1}")
        if self.r2 is not None:
            parts.append(f"r{self.r2}")
        if self.imm is not None:
            parts.append(str(self.imm))
        return " ".join(parts)


NOOP = Instr("noop")

# Actions authorizing cache inserts: ("cache", addr) or ("prefetch", addr).
AuthAction = tuple[tuple[str, int], ...]


@dataclass(frozen=True, slots=True)
class TsxState:
    active: bool
    rf: tuple[int, ...]
    fb: int


@dataclass(frozen=True, slots=True)
class AccessMap:
    """Accessibility predicate: sorted disjoint inclusive ranges of user
    memory.  Everything outside is kernel memory.  Never modified by any
    transition."""

    ranges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        prev_hi = -1
        for lo, hi in self.ranges:
            if not (0 <= lo <= hi <= MASK32):
                raise ValueError(f"bad range {lo:#x}-{hi:#x}")
            if lo <= prev_hi:
                raise ValueError("ranges must be sorted and disjoint")
            prev_hi = hi

    def allows(self, a: int) -> bool:
        for lo, hi in self.ranges:
            if a < lo:
                return False
            if a <= hi:
                return True
        return False


@dataclass(frozen=True, slots=True)
class IsaState:
    pc: int
    rf: tuple[int, ...]
    tsx: TsxState
    halt: bool
    imem: dict[int, Instr]
    dmem: dict[int, int]
    ga: AccessMap
    cache: dict[int, int]


def zero_rf(reg_count: int = REG_COUNT) -> tuple[int, ...]:
    return (0,) * reg_count


def initial_isa_state(
    imem: dict[int, Instr],
    dmem: dict[int, int],
    ga: AccessMap,
    pc: int = 0,
    reg_count: int = REG_COUNT,
) -> IsaState:
    rf = zero_rf(reg_count)
    return IsaState(pc, rf, TsxState(False, rf, 0), False, dict(imem), dict(dmem), ga, {})


def fetch_instr(imem: dict[int, Instr], a: int) -> Instr:
    """Instruction at address a, or noop if unmapped."""
    return imem.get(a, NOOP)


def dmem_read(dmem: dict[int, int], a: int) -> int:
    """Unmapped reads yield 0."""
    return dmem.get(a, 0)


def isa_det_step(s: IsaState) -> IsaState:
    """The deterministic sub-step: execute the instruction at pc.

    Left-total: a halted state steps to itself, unmapped pc fetches noop.
    """
    if s.halt:
        return s
    i = fetch_instr(s.imem, s.pc)
    op = i.op
    pc1 = w32(s.pc + 1)
    rf = s.rf

    if op == "noop":
        return _with(s, pc=pc1)
    if op == "halt":
        return _with(s, pc=pc1, halt=True)
    if op == "loadi":
        return _with(s, pc=pc1, rf=_set(rf, i.rd, w32(i.imm)))
    if op == "addi":
        return _with(s, pc=pc1, rf=_set(rf, i.rd, w32(rf[i.r1] + i.imm)))
    if op == "add":
        return _with(s, pc=pc1, rf=_set(rf, i.rd, w32(rf[i.r1] + rf[i.r2])))
    if op == "mul":
        return _with(s, pc=pc1, rf=_set(rf, i.rd, w32(rf[i.r1] * rf[i.r2])))
    if op == "and":
        return _with(s, pc=pc1, rf=_set(rf, i.rd, rf[i.r1] & rf[i.r2]))
    if op == "cmp":
        return _with(s, pc=pc1, rf=_set(rf, i.rd, compare(rf[i.r1], rf[i.r2])))
    if op == "jg":
        taken = rf[i.r1] == 2
        return _with(s, pc=w32(s.pc + i.imm) if taken else pc1)
    if op == "jge":
        taken = rf[i.r1] in (1, 2)
        return _with(s, pc=w32(s.pc + i.imm) if taken else pc1)
    if op == "tsx-start":
        return _with(s, pc=pc1, tsx=TsxState(True, rf, w32(i.imm)))
    if op == "tsx-end":
        return _with(s, pc=pc1, tsx=TsxState(False, s.tsx.rf, s.tsx.fb))
    if op in ("ldri", "ldr"):
        ea = w32(rf[i.r1] + (i.imm if op == "ldri" else rf[i.r2]))
        if s.ga.allows(ea):
            v = dmem_read(s.dmem, ea)
            cache = dict(s.cache)
            cache[ea] = v
            return _with(s, pc=pc1, rf=_set(rf, i.rd, v), cache=cache)
        if s.tsx.active:
            return _with(
                s, pc=s.tsx.fb, rf=s.tsx.rf,
                tsx=TsxState(False, s.tsx.rf, s.tsx.fb),
            )
        return _with(s, halt=True)
    if op == "in-cache":
        ea = w32(rf[i.r1] + rf[i.r2])
        hit = 1 if (s.ga.allows(ea) and ea in s.cache) else 0
        return _with(s, pc=pc1, rf=_set(rf, i.rd, hit))
    raise AssertionError(f"unknown op {op!r}")


def _set(rf: tuple[int, ...], r: int, v: int) -> tuple[int, ...]:
    return rf[:r] + (v,) + rf[r + 1:]


def _with(s: IsaState, **kw) -> IsaState:
    return IsaState(
        kw.get("pc", s.pc),
        kw.get("rf", s.rf),
        kw.get("tsx", s.tsx),
        kw.get("halt", s.halt),
        s.imem,
        s.dmem,
        s.ga,
        kw.get("cache", s.cache),
    )


CacheChoice = tuple[tuple[int, int], ...]


def _check_choice(s: IsaState, pairs, what: str) -> None:
    for a, d in pairs:
        if not s.ga.allows(a):
            raise ChoiceError(f"{what}: address {a:#x} is not accessible")
        if d != dmem_read(s.dmem, a):
            raise ChoiceError(f"{what}: datum {d:#x} wrong for address {a:#x}")


def isa_cache_step(s: IsaState, add: CacheChoice = (), rem: CacheChoice = ()) -> IsaState:
    """Environment cache step: cache' = (cache ∪ add) \\ rem.

    Every pair in add and rem must be accessible and value-correct;
    anything else is an invalid choice and raises ChoiceError.
    """
    _check_choice(s, add, "add")
    _check_choice(s, rem, "rem")
    if not add and not rem:
        return s
    cache = dict(s.cache)
    for a, d in add:
        cache[a] = d
    for a, d in rem:
        if cache.get(a) == d:
            del cache[a]
    return _with(s, cache=cache)


def isa_step(
    s: IsaState,
    pre_add: CacheChoice = (),
    pre_rem: CacheChoice = (),
    post_add: CacheChoice = (),
    post_rem: CacheChoice = (),
) -> IsaState:
    """One full architectural step: cache choice, instruction, cache choice."""
    s1 = isa_cache_step(s, pre_add, pre_rem)
    s2 = isa_det_step(s1)
    return isa_cache_step(s2, post_add, post_rem)


def apply_prefetches(
    action: AuthAction,
    dmem: dict[int, int],
    cache: dict[int, int],
    ga: AccessMap,
) -> dict[int, int]:
    """Fold cache/prefetch actions into the cache, left to right.

    Actions on inaccessible addresses are ignored: the environment cannot
    authorize caching of kernel memory.
    """
    out = dict(cache)
    for kind, a in action:
        if kind not in ("cache", "prefetch"):
            raise ValueError(f"bad action kind {kind!r}")
        if ga.allows(a):
            out[a] = dmem_read(dmem, a)
    return out


def imem_has_in_cache(imem: dict[int, Instr]) -> bool:
    return any(i.op == "in-cache" for i in imem.values())


def isa_a_step(s: IsaState, action: AuthAction = ()) -> IsaState:
    """Action-labeled architectural step: instruction, then apply the
    authorized cache actions.  The action-labeled machine's instruction
    set excludes in-cache."""
    if imem_has_in_cache(s.imem):
        raise ValueError("action-labeled machine does not support in-cache")
    s1 = isa_det_step(s)
    return _with(s1, cache=apply_prefetches(action, s1.dmem, s1.cache, s1.ga))


def label(s: IsaState) -> IsaState:
    """Observation label: the state with the cache erased."""
    return _with(s, cache={})


def cache_invariant_ok(s: IsaState) -> bool:
    """Every cache line is accessible and agrees with data memory."""
    return all(
        s.ga.allows(a) and d == dmem_read(s.dmem, a) for a, d in s.cache.items()
    )
