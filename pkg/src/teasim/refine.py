"""Refinement maps, witness functions, and executable obligations.

The committed work of a pipeline state maps to an architectural state by
discarding everything in flight (`r_ic`, cache erased) or by keeping the
cache observable (`r_a`, used for the prefetch/eviction audit).  The
obligation checkers run one pipeline transition at a time: a transition
that retires nothing must strictly decrease the distance to the next
retirement, and a retiring transition must be matched by running the
architectural machine one step per retired instruction, resolving its
cache nondeterminism so the cache-membership results agree.  Failures
come back as data (findings with a kind and message), never exceptions.

The cache-action audit compares each transition's actual cache delta
against the actions a designer-supplied authorization policy admits:
`writeback` authorizes exactly what this machine does (including
speculative fills), `commit` authorizes only the effects of retired
loads — the intent policy that the speculative machine violates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

from .isa import (
    AuthAction,
    IsaState,
    apply_prefetches,
    dmem_read,
    fetch_instr,
    isa_det_step,
    isa_step,
    label,
    w32,
)
from .ma import (
    CHECK_MOPS,
    MEMORY_OPS,
    MaState,
    RobLine,
    StepInfo,
    arch_project,
    decode_one,
    ma_step,
    man_step,
    maximal_choice,
    step_core,
)
from .variants import History, init_h, is_entangled, mah_step

MaPair = tuple[MaState, History]


def _ma_state(x) -> MaState:
    return x[0] if isinstance(x, tuple) else x


def r_ic(x: MaState | MaPair) -> IsaState:
    """Commitment map: committed architectural state, cache discarded."""
    return arch_project(_ma_state(x), keep_cache=False)


def r_a(x: MaState | MaPair) -> IsaState:
    """Commitment map with the cache observable."""
    return arch_project(_ma_state(x), keep_cache=True)


def b_ic(x, y) -> bool:
    """Matching relation over the disjoint union of the two machines:
    equality on the same side, label equality through r_ic across."""
    x_ma = not isinstance(x, IsaState)
    y_ma = not isinstance(y, IsaState)
    if x_ma == y_ma:
        return x == y
    ma, isa = (x, y) if x_ma else (y, x)
    return label(r_ic(ma)) == label(isa)


@dataclass(frozen=True, slots=True)
class Finding:
    """One obligation failure.

    kind is "tea-meltdown" or "tea-spectre" for transient-execution
    evidence, "functional" for plain ISA/MA disagreement, "liveness"
    when the machine exceeds its commit-distance bound.
    """

    obligation: str
    kind: str
    detail: str


def stutter_wit(x: MaState | MaPair, w: IsaState | None = None) -> int | None:
    """Steps until this state's next retiring transition.

    Returns None past the configured cap (a liveness violation).  The
    second argument is accepted for signature parity; same-side pairs
    always yield 0.
    """
    s = _ma_state(x)
    if s.halt:
        return 0
    cap = s.params.stutter_cap()
    for k in range(cap + 1):
        s, info = step_core(s)
        if info.retired > 0:
            return k
    return None


def counted_lines(batch: tuple[RobLine, ...]) -> list[RobLine]:
    """Commit batch filtered down to one line per retired instruction."""
    return [l for l in batch if l.excep or l.mop not in CHECK_MOPS]


def skip_wit(info: StepInfo) -> int:
    """Instructions retired by a transition; 1 for non-retiring ones,
    where the value is never consumed."""
    return max(1, info.retired)


def _expected_mop(instr, faulted: bool) -> str | None:
    uops = decode_one(instr)
    return uops[0].mop if faulted else uops[-1].mop


def run_ic(
    w: IsaState, batch: tuple[RobLine, ...]
) -> tuple[IsaState | None, Finding | None]:
    """Architectural run matching a retiring transition.

    Executes one step per retired instruction, picking the pre-step
    cache choice so an in-cache result agrees with what the pipeline
    computed.  A result no legal choice can produce is the transient
    execution counterexample.
    """
    v = w
    for line in counted_lines(batch):
        instr = fetch_instr(v.imem, v.pc)
        if line.mop != _expected_mop(instr, line.excep):
            return None, Finding(
                "wsk-run", "functional",
                f"pipeline committed {line.mop} where the architectural "
                f"stream has {instr.render()!r} at {v.pc:#x}",
            )
        pre_add = pre_rem = ()
        if line.mop == "min-cache":
            ea = w32(v.rf[instr.r1] + v.rf[instr.r2])
            if line.val == 1:
                if not v.ga.allows(ea):
                    return None, Finding(
                        "wsk-run", "tea-meltdown",
                        f"in-cache observed a cached kernel address "
                        f"{ea:#x}; no architectural cache choice allows it",
                    )
                pre_add = ((ea, dmem_read(v.dmem, ea)),)
            elif v.ga.allows(ea) and ea in v.cache:
                pre_rem = ((ea, dmem_read(v.dmem, ea)),)
        v = isa_step(v, pre_add=pre_add, pre_rem=pre_rem)
    return v, None


def _arch_mismatch(u: IsaState, v: IsaState) -> str | None:
    if u.pc != v.pc:
        return f"pc {u.pc:#x} vs {v.pc:#x}"
    if u.rf != v.rf:
        regs = [i for i in range(len(u.rf)) if u.rf[i] != v.rf[i]]
        return f"registers {regs} differ ({[hex(u.rf[i]) for i in regs]} vs "\
               f"{[hex(v.rf[i]) for i in regs]})"
    if u.halt != v.halt:
        return f"halt {u.halt} vs {v.halt}"
    if u.tsx != v.tsx:
        return "tsx state differs"
    return None


def check_wsk_transition(s: MaState, h: History) -> list[Finding]:
    """All witness-skipping obligations for one transition of the
    cache-erased (Meltdown) refinement, with w = r_ic(s)."""
    findings: list[Finding] = []
    if s.halt:
        return findings
    u, info = step_core(s)
    w = r_ic(s)

    if label(r_ic(s)) != label(w):
        findings.append(Finding("wsk-label", "functional",
                                "state not related to its own image"))

    if info.retired == 0:
        # Non-retiring: stay related and get strictly closer to a commit.
        if label(r_ic(u)) != label(w):
            findings.append(Finding(
                "wsk-match", "functional",
                "architectural fields changed on a non-retiring step",
            ))
            return findings
        d_s, d_u = stutter_wit(s), stutter_wit(u)
        if d_s is None or d_u is None:
            findings.append(Finding("wsk-match", "liveness",
                                    "no commit within the stutter bound"))
        elif not d_u < d_s:
            findings.append(Finding(
                "wsk-match", "functional",
                f"stutter witness did not decrease ({d_s} -> {d_u})",
            ))
        return findings

    v, fail = run_ic(w, info.batch)
    if fail is not None:
        findings.append(fail)
        return findings
    diff = _arch_mismatch(label(r_ic(u)), label(v))
    if diff is not None:
        findings.append(Finding(
            "wsk-match", "functional",
            f"retired {info.retired} instruction(s) but the matched "
            f"architectural run disagrees: {diff}",
        ))
    return findings


# --- cache action audit (Spectre decomposition) ---

# An authorization policy maps one transition to its admitted actions.
AuthSpec = Callable[[MaState, History | None, StepInfo, MaState], AuthAction]


def auth_writeback(
    s: MaState, h: History | None, info: StepInfo, u: MaState
) -> AuthAction:
    """Authorize exactly the fills this machine performs: every load
    writeback deposits its line and its prefetch set."""
    acts: list[tuple[str, int]] = []
    for wb in info.writebacks:
        if wb.mop in MEMORY_OPS and wb.inserted:
            acts.append(("cache", wb.inserted[0][0]))
            acts.extend(("prefetch", a) for a, _ in wb.inserted[1:])
    return tuple(acts)


def _line_commits(u: MaState, tag: int) -> bool:
    """Whether the ROB line with this tag eventually retires (as opposed
    to being squashed by an invalidation), by bounded look-ahead."""
    x = u
    cap = u.params.stutter_cap() * (u.params.max_rob + 2)
    for _ in range(cap):
        if x.halt:
            return False
        x, info = step_core(x)
        if any(l.rob_id == tag for l in info.batch):
            return True
        if info.invalidated:
            return False
    return False


def auth_commit(
    s: MaState, h: History | None, info: StepInfo, u: MaState
) -> AuthAction:
    """Designer-intent policy: loads fill the cache at writeback only if
    they retire; squashed (transient) loads emit no actions at all."""
    acts: list[tuple[str, int]] = []
    for wb in info.writebacks:
        if wb.mop not in MEMORY_OPS or not wb.inserted:
            continue
        retires = any(l.rob_id == wb.dst for l in info.batch) or \
            _line_commits(u, wb.dst)
        if retires:
            acts.append(("cache", wb.inserted[0][0]))
            acts.extend(("prefetch", a) for a, _ in wb.inserted[1:])
    return tuple(acts)


AUTH_SPECS: dict[str, AuthSpec] = {
    "writeback": auth_writeback,
    "commit": auth_commit,
}


def apply_action(s: MaState, cache: dict[int, int], action: AuthAction) -> dict[int, int]:
    """Cache after applying an action sequence; kernel addresses cannot
    be authorized and are ignored."""
    return apply_prefetches(action, s.dmem, cache, s.ga)


def auth_actions(s: MaState, u: MaState, spec: str = "writeback",
                 h: History | None = None) -> AuthAction:
    """Actions labelling the transition s -> u under the named policy."""
    s2, info = step_core(s)
    if s2 != u:
        raise ValueError("u is not the successor of s")
    return AUTH_SPECS[spec](s, h, info, u)


def check_cache_action(
    s: MaState, h: History | None, info: StepInfo, u: MaState,
    spec: AuthSpec,
) -> Finding | None:
    """cache_u must equal the cache after applying the authorized
    actions of this transition."""
    want = apply_action(s, s.cache, spec(s, h, info, u))
    if want == u.cache:
        return None
    extra = sorted(a for a, d in u.cache.items() if want.get(a) != d)
    missing = sorted(a for a, d in want.items() if u.cache.get(a) != d)
    parts = []
    if extra:
        parts.append("unauthorized lines " + ", ".join(f"{a:#x}" for a in extra))
    if missing:
        parts.append("authorized but absent " + ", ".join(f"{a:#x}" for a in missing))
    return Finding("action-soundness", "tea-spectre", "; ".join(parts))


def run_ic_c(
    w: IsaState, batch: tuple[RobLine, ...], u: MaState
) -> tuple[IsaState | None, Finding | None]:
    """Architectural run for the cache-observable refinement.

    The caches already agree, so no pre-step choice is made; after the
    matched instructions, the remaining pipeline cache delta must be
    reachable by authorized fills alone.
    """
    v = w
    for line in counted_lines(batch):
        instr = fetch_instr(v.imem, v.pc)
        if instr.op == "in-cache":
            return None, Finding("wsk-a-run", "functional",
                                 "in-cache present in an action-labeled run")
        if line.mop != _expected_mop(instr, line.excep):
            return None, Finding(
                "wsk-a-run", "functional",
                f"pipeline committed {line.mop} where the architectural "
                f"stream has {instr.render()!r} at {v.pc:#x}",
            )
        v = isa_det_step(v)
    extra = {a: d for a, d in u.cache.items() if v.cache.get(a) != d}
    for a, d in sorted(extra.items()):
        if not v.ga.allows(a) or d != dmem_read(v.dmem, a):
            return None, Finding(
                "wsk-a-run", "tea-spectre",
                f"cache line {a:#x} cannot be produced by any authorized fill",
            )
    if extra:
        cache = dict(v.cache)
        cache.update(extra)
        v = IsaState(v.pc, v.rf, v.tsx, v.halt, v.imem, v.dmem, v.ga, cache)
    return v, None


def check_wsk_a_transition(
    s: MaState, h: History, spec: AuthSpec
) -> list[Finding]:
    """Cache-observable witness obligations plus the action audit for
    one transition, with w = r_a(s)."""
    findings: list[Finding] = []
    if s.halt:
        return findings
    u, info = step_core(s)
    w = r_a(s)

    cex = check_cache_action(s, h, info, u, spec)
    if cex is not None:
        findings.append(cex)

    if info.retired == 0:
        # Labels erase the cache, so branch 1 constrains only the
        # architectural fields; unauthorized fills are the audit's job.
        if label(r_a(u)) != label(w):
            findings.append(Finding("wsk-a-match", "functional",
                                    "architectural fields changed on a "
                                    "non-retiring step"))
        else:
            d_s, d_u = stutter_wit(s), stutter_wit(u)
            if d_s is None or d_u is None:
                findings.append(Finding("wsk-a-match", "liveness",
                                        "no commit within the stutter bound"))
            elif not d_u < d_s:
                findings.append(Finding(
                    "wsk-a-match", "functional",
                    f"stutter witness did not decrease ({d_s} -> {d_u})",
                ))
        return findings

    v, fail = run_ic_c(w, info.batch, u)
    if fail is not None:
        findings.append(fail)
        return findings
    diff = _arch_mismatch(label(r_a(u)), label(v))
    if diff is None and v.cache != u.cache:
        diff = "cache contents differ"
    if diff is not None:
        findings.append(Finding(
            "wsk-a-match", "functional",
            f"retired {info.retired} instruction(s) but the matched "
            f"architectural run disagrees: {diff}",
        ))
    return findings


# --- entangled-state obligations ---

def is_initial(s: MaState) -> bool:
    return (
        s.fetch_pc == s.pc
        and not s.rob
        and not s.reg_st
        and all(not rs.busy and not rs.exec for rs in s.rs_f)
    )


def check_entangled_obligations(
    samples: Iterable[MaPair],
) -> list[Finding]:
    """The four entangled-state obligations over a batch of samples:
    maximal choices reproduce the deterministic step, the history-
    carrying step projects to it, initial states are entangled, and
    entangledness is closed under stepping."""
    findings: list[Finding] = []
    for s, h in samples:
        if ma_step(s) != man_step(s, maximal_choice(s)):
            findings.append(Finding(
                "maximal-step-subset", "functional",
                "deterministic step differs from the maximal choice"))
        if mah_step(s, h)[0] != ma_step(s):
            findings.append(Finding(
                "history-projection", "functional",
                "history-carrying step changed the machine component"))
        # Emitted initial states start with a cold cache; the empty
        # history commits to exactly that.
        if is_initial(s) and not s.cache and not is_entangled(s, init_h(s)):
            findings.append(Finding(
                "init-entangled", "functional",
                "initial state not entangled with the empty history"))
        if not is_entangled(s, h):
            findings.append(Finding(
                "entangled-sample", "functional",
                "generated sample is not entangled"))
            continue
        u, hu = mah_step(s, h)
        if not is_entangled(u, hu):
            findings.append(Finding(
                "entangled-closure", "functional",
                "successor of an entangled state is not entangled"))
    return findings


def check_replay_identity(s: MaState, h: History, steps: int) -> Finding | None:
    """Run forward and verify every intermediate pair stays replayable."""
    for _ in range(steps):
        if s.halt:
            break
        s, h = mah_step(s, h)
        if not is_entangled(s, h):
            return Finding("replay-identity", "functional",
                           f"replay diverged at cycle {s.cyc}")
    return None
