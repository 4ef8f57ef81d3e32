"""Cycle-accurate out-of-order microarchitecture.

Tomasulo-style core over the architectural model in `isa`: multi-issue
fetch/decode, reservation stations with operand forwarding, a reorder
buffer with in-order commit, memory barriers for the cache-membership
query, TSX rollback via pipeline invalidation, and an insert-only cache
fed at load writeback together with a configurable prefetcher.

The step function is written against an explicit resource `Choice`
(fetch count, stations removed from issue, commits allowed, execution
starts allowed).  The deterministic machine always takes the maximal
choice; the restricted choices exist so that a recorded execution can be
replayed cycle-for-cycle from an invalidated state (see `variants`).

Scheduling within a cycle, in order:
  1. the commit batch is read off the pre-state reorder buffer
     (writebacks become commit-visible one cycle later),
  2. stations whose operands were resolved before this cycle may start
     executing (newly issued stations start next cycle at the earliest),
  3. fetched instructions are decoded and issued,
  4. finishing stations write back and forward their results, and loads
     deposit their line plus the prefetch set into the cache,
  5. commit effects are applied in program order; an exception, taken
     jump, or halt empties the pipeline and redirects fetch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

from .isa import (
    REG_COUNT,
    AccessMap,
    ChoiceError,
    Instr,
    IsaState,
    TsxState,
    compare,
    dmem_read,
    fetch_instr,
    w32,
    zero_rf,
)

RS_NEEDED = frozenset({
    "mnoop", "mloadi", "maddi", "madd", "mmul", "mand", "mcmp", "mjg",
    "mjge", "mldri", "memi-check", "mldr", "mem-check", "min-cache",
})
REG_WRITE = frozenset({
    "mloadi", "maddi", "madd", "mmul", "mand", "mcmp", "mldri", "mldr",
    "min-cache",
})
BARRIER_OPS = frozenset({"min-cache"})
MEMORY_OPS = frozenset({"mldri", "mldr"})
INVALIDATING_MOPS = frozenset({"mhalt", "mjg", "mjge"})
CHECK_MOPS = frozenset({"memi-check", "mem-check"})

# Operand slot: None, ("r", reg) or ("c", const).
Slot = tuple[str, int] | None


@dataclass(frozen=True, slots=True)
class MicroInstr:
    """Micro-instruction with J/K source slots resolved at decode."""

    mop: str
    rd: int | None = None
    j: Slot = None
    k: Slot = None
    imm: int | None = None  # mtsx-start fallback address


@lru_cache(maxsize=8192)
def decode_one(i: Instr) -> tuple[MicroInstr, ...]:
    """Decode an instruction into its micro-instruction sequence.

    Loads split into an access check plus the load proper; everything
    else maps to a single micro-instruction.  `cmp` places its first
    source in the K slot so the comparison result has the architectural
    operand order.
    """
    op = i.op
    if op == "ldri":
        j, k = ("r", i.r1), ("c", i.imm)
        return (MicroInstr("memi-check", None, j, k),
                MicroInstr("mldri", i.rd, j, k))
    if op == "ldr":
        j, k = ("r", i.r1), ("r", i.r2)
        return (MicroInstr("mem-check", None, j, k),
                MicroInstr("mldr", i.rd, j, k))
    if op == "halt":
        return (MicroInstr("mhalt"),)
    if op == "noop":
        return (MicroInstr("mnoop"),)
    if op == "loadi":
        return (MicroInstr("mloadi", i.rd, None, ("c", i.imm)),)
    if op == "addi":
        return (MicroInstr("maddi", i.rd, ("r", i.r1), ("c", i.imm)),)
    if op in ("add", "mul", "and"):
        return (MicroInstr("m" + op, i.rd, ("r", i.r1), ("r", i.r2)),)
    if op == "cmp":
        return (MicroInstr("mcmp", i.rd, ("r", i.r2), ("r", i.r1)),)
    if op in ("jg", "jge"):
        return (MicroInstr("m" + op, None, ("r", i.r1), ("c", i.imm)),)
    if op == "tsx-start":
        return (MicroInstr("mtsx-start", imm=w32(i.imm)),)
    if op == "tsx-end":
        return (MicroInstr("mtsx-end"),)
    if op == "in-cache":
        return (MicroInstr("min-cache", i.rd, ("r", i.r1), ("r", i.r2)),)
    raise AssertionError(f"unknown op {op!r}")


MAX_DECODE = 2  # largest micro-instruction sequence decode_one produces


@dataclass(frozen=True, slots=True)
class RobLine:
    rob_id: int
    mop: str
    rdst: int | None
    rdy: bool
    val: int
    excep: bool


@dataclass(frozen=True, slots=True)
class ResStation:
    rs_id: int
    mop: str | None
    qj: int | None
    qk: int | None
    vj: int
    vk: int
    cpc: int
    busy: bool
    exec: bool
    dst: int
    rb_pc: int


def idle_station(rs_id: int) -> ResStation:
    return ResStation(rs_id, None, None, None, 0, 0, 0, False, False, 0, 0)


DEFAULT_MOP_TIMES = {"mmul": 3, "mldri": 2, "mldr": 2}

# Prefetch policies: ("next", n) caches a+1..a+n, ("stride", step, count)
# caches a+step, a+2*step, ..; ("none",) disables prefetching.  Policies
# only ever name accessible addresses.
PrefetchSpec = tuple


@dataclass(frozen=True, slots=True)
class MaParams:
    fetch_num: int = 3
    max_rob: int = 19
    rs_count: int = 4
    reg_count: int = REG_COUNT
    mop_times: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_MOP_TIMES))
    prefetch: PrefetchSpec = ("next", 1)

    def __post_init__(self) -> None:
        if self.fetch_num < 1:
            raise ValueError("fetch_num must be at least 1")
        if self.max_rob < MAX_DECODE:
            raise ValueError("max_rob must be at least the decode width")
        if self.rs_count < 1:
            raise ValueError("need at least one reservation station")
        for mop, t in self.mop_times.items():
            if t < 1:
                raise ValueError(f"mop time for {mop} must be positive")

    def mop_time(self, mop: str) -> int:
        return self.mop_times.get(mop, 1)

    @property
    def rob_tag_space(self) -> int:
        # Smallest cyclic tag space keeping in-flight tags fresh.
        return self.max_rob + 1

    def stutter_cap(self) -> int:
        """Upper bound on steps between commits on a live machine."""
        longest = max([1] + list(self.mop_times.values()))
        return self.max_rob * longest + 2 * self.fetch_num + 8

    def prefetch_addrs(self, ga: AccessMap, a: int) -> tuple[int, ...]:
        kind = self.prefetch[0]
        if kind == "none":
            return ()
        if kind == "next":
            n = self.prefetch[1]
            cand = [w32(a + i) for i in range(1, n + 1)]
        elif kind == "stride":
            step, count = self.prefetch[1], self.prefetch[2]
            cand = [w32(a + step * i) for i in range(1, count + 1)]
        else:
            raise ValueError(f"unknown prefetch policy {kind!r}")
        return tuple(p for p in cand if ga.allows(p))


@dataclass(frozen=True, slots=True)
class MaState:
    pc: int
    rf: tuple[int, ...]
    tsx: TsxState
    halt: bool
    imem: dict[int, Instr]
    dmem: dict[int, int]
    ga: AccessMap
    cache: dict[int, int]
    rob: tuple[RobLine, ...]
    rs_f: tuple[ResStation, ...]
    reg_st: dict[int, int]  # register -> tag of the pending writer's ROB line
    cyc: int
    fetch_pc: int
    params: MaParams


def initial_ma_state(
    imem: dict[int, Instr],
    dmem: dict[int, int],
    ga: AccessMap,
    pc: int = 0,
    params: MaParams | None = None,
) -> MaState:
    params = params or MaParams()
    rf = zero_rf(params.reg_count)
    return MaState(
        pc=pc, rf=rf, tsx=TsxState(False, rf, 0), halt=False,
        imem=dict(imem), dmem=dict(dmem), ga=ga, cache={},
        rob=(), rs_f=tuple(idle_station(i) for i in range(params.rs_count)),
        reg_st={}, cyc=0, fetch_pc=pc, params=params,
    )


@dataclass(frozen=True, slots=True)
class Choice:
    """Resource selections for one step of the nondeterministic machine.

    `tags` optionally pins the ROB tags assigned to this cycle's issued
    micro-instructions; replay uses it to reproduce tags that the default
    continue-from-tail assignment cannot recover once older lines have
    committed.  The maximal choice leaves it None.
    """

    n: int
    allow_commit: frozenset[int]
    allow_start: frozenset[int]
    busy_rs: frozenset[int]
    tags: tuple[int, ...] | None = None


def maximal_choice(s: MaState) -> Choice:
    p = s.params
    return Choice(
        n=max_fetch_n(s),
        allow_commit=frozenset(range(p.rob_tag_space)),
        allow_start=frozenset(range(p.rs_count)),
        busy_rs=frozenset(),
    )


@dataclass(frozen=True, slots=True)
class IssueRec:
    uop: MicroInstr
    tag: int
    rs_id: int | None
    ipc: int  # pc of the parent instruction


@dataclass(frozen=True, slots=True)
class WbRec:
    rs_id: int
    dst: int
    mop: str
    val: int
    excep: bool
    ea: int | None
    inserted: tuple[tuple[int, int], ...]  # cache lines deposited


@dataclass(frozen=True, slots=True)
class StepInfo:
    """Everything one cycle did, for history building and tracing."""

    n: int
    issued: tuple[IssueRec, ...]
    started: tuple[int, ...]
    writebacks: tuple[WbRec, ...]
    batch: tuple[RobLine, ...]
    invalidated: bool
    retired: int


def fetch_n(imem: dict[int, Instr], pc: int, n: int) -> tuple[Instr, ...]:
    return tuple(fetch_instr(imem, w32(pc + i)) for i in range(n))


def free_rob(rob: tuple[RobLine, ...], params: MaParams) -> int:
    return params.max_rob - len(rob)


def idle_count(rs_f: tuple[ResStation, ...]) -> int:
    return sum(1 for rs in rs_f if not rs.busy)


def issuable(uops: tuple[MicroInstr, ...], s: MaState) -> bool:
    """Whether this micro-instruction sequence fits the free resources."""
    if not uops:
        return True
    needed = sum(1 for u in uops if u.mop in RS_NEEDED)
    if needed > idle_count(s.rs_f):
        return False
    return len(uops) <= free_rob(s.rob, s.params)


def max_fetch_n(s: MaState) -> int:
    """Largest n (up to the fetch width) whose decoded sequence fits."""
    decoded = [decode_one(i) for i in fetch_n(s.imem, s.fetch_pc, s.params.fetch_num)]
    idle = idle_count(s.rs_f)
    free = free_rob(s.rob, s.params)
    for n in range(s.params.fetch_num, 0, -1):
        total = needed = 0
        for group in decoded[:n]:
            total += len(group)
            for u in group:
                if u.mop in RS_NEEDED:
                    needed += 1
        if needed <= idle and total <= free:
            return n
    return 0


def rob_ids(
    count: int, rob: tuple[RobLine, ...], params: MaParams
) -> tuple[int, ...]:
    """Consecutive fresh tags continuing past the newest ROB line."""
    if count > free_rob(rob, params):
        raise ChoiceError("not enough reorder buffer space")
    space = params.rob_tag_space
    start = (rob[-1].rob_id + 1) % space if rob else 0
    return tuple((start + k) % space for k in range(count))


def reg_dst(u: MicroInstr) -> int | None:
    return u.rd if u.mop in REG_WRITE else None


def detect_raw(
    uops: list[MicroInstr], tags: tuple[int, ...]
) -> list[tuple[int | None, int | None]]:
    """Within-batch read-after-write dependencies, per source slot.

    For each register source, the tag of the latest earlier producer of
    that register in the batch, else None.
    """
    deps: list[tuple[int | None, int | None]] = []
    for i, u in enumerate(uops):
        out: list[int | None] = []
        for slot in (u.j, u.k):
            dep = None
            if slot is not None and slot[0] == "r":
                for j in range(i - 1, -1, -1):
                    if reg_dst(uops[j]) == slot[1]:
                        dep = tags[j]
                        break
            out.append(dep)
        deps.append((out[0], out[1]))
    return deps


def rob_get(tag: int, rob: tuple[RobLine, ...]) -> RobLine | None:
    for line in rob:
        if line.rob_id == tag:
            return line
    return None


def rob_before(tag: int, rob: tuple[RobLine, ...]) -> tuple[RobLine, ...]:
    """Lines strictly before the line with this tag (all lines if absent)."""
    for i, line in enumerate(rob):
        if line.rob_id == tag:
            return rob[:i]
    return rob


def comp_val(rs: ResStation, s: MaState) -> int:
    """Result of a ready station's micro-operation, from the pre-state."""
    mop = rs.mop
    if mop in MEMORY_OPS:
        return dmem_read(s.dmem, w32(rs.vj + rs.vk))
    if mop == "mand":
        return rs.vj & rs.vk
    if mop in ("maddi", "madd"):
        return w32(rs.vj + rs.vk)
    if mop == "mmul":
        return w32(rs.vj * rs.vk)
    if mop == "mloadi":
        return rs.vk
    if mop == "min-cache":
        return 1 if w32(rs.vj + rs.vk) in s.cache else 0
    if mop == "mcmp":
        return compare(rs.vk, rs.vj)
    if mop in ("mjg", "mjge"):
        taken = rs.vj == 2 or (mop == "mjge" and rs.vj == 1)
        return w32(rs.rb_pc + rs.vk) if taken else w32(rs.rb_pc + 1)
    return 0


def comp_exc(rs: ResStation, s: MaState) -> bool:
    if rs.mop in CHECK_MOPS:
        return not s.ga.allows(w32(rs.vj + rs.vk))
    return False


def to_commit(rob: tuple[RobLine, ...], allow_commit) -> tuple[RobLine, ...]:
    """Ready prefix that commits this cycle, cut at (and including) the
    first exception, jump, or halt line."""
    batch: list[RobLine] = []
    for line in rob:
        if not line.rdy or line.rob_id not in allow_commit:
            break
        batch.append(line)
        if line.excep or line.mop in INVALIDATING_MOPS:
            break
    return tuple(batch)


def batch_invalidates(batch: tuple[RobLine, ...]) -> bool:
    return bool(batch) and (
        batch[-1].excep or batch[-1].mop in INVALIDATING_MOPS
    )


def will_invalidate(rob: tuple[RobLine, ...]) -> bool:
    return batch_invalidates(to_commit(rob, _ALL))


def retired_count(batch: tuple[RobLine, ...]) -> int:
    """Completed instructions in a commit batch.

    A non-faulting access check retires with its load, so it counts
    zero here and the load counts one when it commits; a faulting check
    retires the whole load instruction by itself.
    """
    n = 0
    for line in batch:
        if line.mop in CHECK_MOPS and not line.excep:
            continue
        n += 1
    return n


class _All:
    def __contains__(self, x) -> bool:
        return True


_ALL = _All()


def _setup_slot(
    slot: Slot,
    dep: int | None,
    old_v: int,
    s: MaState,
) -> tuple[int | None, int]:
    """Resolve one source operand at issue: constant, forwarded tag, a
    ready ROB value, or the committed register file."""
    if slot is None:
        return None, 0
    kind, v = slot
    if kind == "c":
        return None, w32(v)
    if dep is not None:
        return dep, old_v
    tag = s.reg_st.get(v)
    if tag is not None:
        line = rob_get(tag, s.rob)
        if line is not None and line.rdy:
            return None, line.val
        return tag, old_v
    return None, s.rf[v]


def step_core(s: MaState, choice: Choice | None = None) -> tuple[MaState, StepInfo]:
    """One cycle of the machine; choice None means the maximal choice.

    Raises ChoiceError on a fetch count above the issuable maximum or a
    station shortage induced by busy_rs.
    """
    if s.halt:
        return s, StepInfo(0, (), (), (), (), False, 0)

    params = s.params
    cyc = s.cyc
    if choice is None:
        n = max_fetch_n(s)
        allow_commit = allow_start = _ALL
        busy_rs: frozenset[int] = frozenset()
        tag_override = None
    else:
        n = choice.n
        if n > max_fetch_n(s):
            raise ChoiceError(f"cannot fetch {n} instructions here")
        allow_commit, allow_start = choice.allow_commit, choice.allow_start
        busy_rs = choice.busy_rs
        tag_override = choice.tags

    # Decode this cycle's fetch group.
    uops: list[MicroInstr] = []
    ipcs: list[int] = []
    for idx, instr in enumerate(fetch_n(s.imem, s.fetch_pc, n)):
        for u in decode_one(instr):
            uops.append(u)
            ipcs.append(w32(s.fetch_pc + idx))
    if tag_override is not None:
        if len(tag_override) != len(uops):
            raise ChoiceError("tag override length mismatch")
        tags = tag_override
    else:
        tags = rob_ids(len(uops), s.rob, params)
    deps = detect_raw(uops, tags)

    # Commit batch from the pre-state buffer: writebacks from this cycle
    # become commit-visible next cycle.
    batch = to_commit(s.rob, allow_commit)
    invalidated = batch_invalidates(batch)

    stations = list(s.rs_f)

    # Execution starts: operands resolved before this cycle, the barrier
    # discipline satisfied against the pre-state buffer, and the start
    # allowed by the choice.
    started: list[int] = []
    for i, rs in enumerate(stations):
        if not (rs.busy and not rs.exec and rs.qj is None and rs.qk is None):
            continue
        if rs.rs_id not in allow_start:
            continue
        if rs.mop in BARRIER_OPS:
            if any(l.mop in MEMORY_OPS for l in rob_before(rs.dst, s.rob)):
                continue
        elif rs.mop in MEMORY_OPS:
            if any(l.mop in BARRIER_OPS for l in rob_before(rs.dst, s.rob)):
                continue
        stations[i] = ResStation(
            rs.rs_id, rs.mop, rs.qj, rs.qk, rs.vj, rs.vk,
            w32(cyc + params.mop_time(rs.mop)), True, True, rs.dst, rs.rb_pc,
        )
        started.append(rs.rs_id)

    # Issue into idle stations not removed by the choice.
    issued: list[IssueRec] = []
    for u, tag, (dj, dk), ipc in zip(uops, tags, deps, ipcs):
        if u.mop not in RS_NEEDED:
            issued.append(IssueRec(u, tag, None, ipc))
            continue
        pick = None
        for i, rs in enumerate(stations):
            if not rs.busy and rs.rs_id not in busy_rs:
                pick = i
                break
        if pick is None:
            raise ChoiceError("no reservation station available for issue")
        rs = stations[pick]
        qj, vj = _setup_slot(u.j, dj, rs.vj, s)
        qk, vk = _setup_slot(u.k, dk, rs.vk, s)
        stations[pick] = ResStation(
            rs.rs_id, u.mop, qj, qk, vj, vk, rs.cpc, True, False, tag, ipc,
        )
        issued.append(IssueRec(u, tag, rs.rs_id, ipc))

    # Writeback: finishing stations free up, forward their result, and
    # loads deposit their line and the prefetch set into the cache.
    writebacks: list[WbRec] = []
    for i in range(len(stations)):
        rs = stations[i]
        if not (rs.busy and rs.exec and rs.cpc == cyc):
            continue
        val = comp_val(rs, s)
        exc = comp_exc(rs, s)
        ea = None
        inserted: tuple[tuple[int, int], ...] = ()
        if rs.mop in MEMORY_OPS:
            ea = w32(rs.vj + rs.vk)
            lines = [(ea, dmem_read(s.dmem, ea))]
            lines += [(p, dmem_read(s.dmem, p))
                      for p in params.prefetch_addrs(s.ga, ea)]
            inserted = tuple(lines)
        stations[i] = ResStation(
            rs.rs_id, rs.mop, rs.qj, rs.qk, rs.vj, rs.vk, rs.cpc,
            False, False, rs.dst, rs.rb_pc,
        )
        dst = rs.dst
        for j, other in enumerate(stations):
            if other.qj == dst or other.qk == dst:
                stations[j] = ResStation(
                    other.rs_id, other.mop,
                    None if other.qj == dst else other.qj,
                    None if other.qk == dst else other.qk,
                    val if other.qj == dst else other.vj,
                    val if other.qk == dst else other.vk,
                    other.cpc, other.busy, other.exec, other.dst, other.rb_pc,
                )
        writebacks.append(WbRec(rs.rs_id, dst, rs.mop, val, exc, ea, inserted))

    # Reorder buffer update: drop the committed prefix, apply writebacks,
    # append the issue group.
    if invalidated:
        rob: tuple[RobLine, ...] = ()
    else:
        kept = list(s.rob[len(batch):])
        if writebacks:
            by_dst = {wb.dst: wb for wb in writebacks}
            for i, line in enumerate(kept):
                wb = by_dst.get(line.rob_id)
                if wb is not None:
                    kept[i] = RobLine(line.rob_id, line.mop, line.rdst,
                                      True, wb.val, wb.excep)
        for rec in issued:
            u = rec.uop
            if u.mop in ("mjg", "mjge"):
                kept.append(RobLine(rec.tag, u.mop, None, False, 0, False))
            elif u.mop in ("mtsx-end", "mhalt"):
                kept.append(RobLine(rec.tag, u.mop, None, True, 0, False))
            elif u.mop == "mtsx-start":
                kept.append(RobLine(rec.tag, u.mop, None, True, u.imm, False))
            else:
                kept.append(RobLine(rec.tag, u.mop, reg_dst(u), False, 0, False))
        rob = tuple(kept)
        assert len(rob) <= params.max_rob

    # Commit effects, in program order over the batch.
    pc, rf, tsx, halt = s.pc, s.rf, s.tsx, s.halt
    for line in batch:
        if line.excep:
            if tsx.active:
                pc, rf = tsx.fb, tsx.rf
                tsx = TsxState(False, tsx.rf, tsx.fb)
            else:
                halt = True
        elif line.mop in ("mjg", "mjge"):
            pc = line.val
        elif line.mop == "mhalt":
            pc = w32(pc + 1)
            halt = True
        elif line.mop == "mtsx-start":
            tsx = TsxState(True, rf, line.val)
            pc = w32(pc + 1)
        elif line.mop == "mtsx-end":
            tsx = TsxState(False, tsx.rf, tsx.fb)
            pc = w32(pc + 1)
        elif line.mop in CHECK_MOPS:
            pass  # pc advances when the paired load commits
        else:
            if line.rdst is not None:
                rf = rf[:line.rdst] + (line.val,) + rf[line.rdst + 1:]
            pc = w32(pc + 1)

    # Register status: issue entries first, then release committed writers.
    if invalidated:
        reg_st: dict[int, int] = {}
    else:
        reg_st = dict(s.reg_st)
        for rec in issued:
            r = reg_dst(rec.uop)
            if r is not None:
                reg_st[r] = rec.tag
        for line in batch:
            if line.rdst is not None and reg_st.get(line.rdst) == line.rob_id:
                del reg_st[line.rdst]

    if invalidated:
        stations = [replace(rs, busy=False, exec=False) for rs in stations]
        fetch_pc = pc
    else:
        fetch_pc = w32(s.fetch_pc + n)

    cache = s.cache
    if any(wb.inserted for wb in writebacks):
        cache = dict(s.cache)
        for wb in writebacks:
            for a, v in wb.inserted:
                cache[a] = v

    out = MaState(
        pc=pc, rf=rf, tsx=tsx, halt=halt,
        imem=s.imem, dmem=s.dmem, ga=s.ga, cache=cache,
        rob=rob, rs_f=tuple(stations), reg_st=reg_st,
        cyc=w32(cyc + 1), fetch_pc=fetch_pc, params=params,
    )
    info = StepInfo(
        n=n, issued=tuple(issued), started=tuple(started),
        writebacks=tuple(writebacks), batch=batch,
        invalidated=invalidated, retired=retired_count(batch),
    )
    return out, info


def ma_step(s: MaState) -> MaState:
    """Deterministic step: the maximal resource choice."""
    return step_core(s)[0]


def man_step(s: MaState, choice: Choice) -> MaState:
    """Nondeterministic step under an explicit resource choice."""
    return step_core(s, choice)[0]


def arch_project(s: MaState, keep_cache: bool) -> IsaState:
    """Project the committed architectural state; pipeline discarded."""
    return IsaState(
        s.pc, s.rf, s.tsx, s.halt, s.imem, s.dmem, s.ga,
        dict(s.cache) if keep_cache else {},
    )


def run_ma(s: MaState, max_steps: int) -> tuple[MaState, int]:
    """Step until halt or the budget runs out; returns (state, steps)."""
    for i in range(max_steps):
        if s.halt:
            return s, i
        s = ma_step(s)
    return s, max_steps
