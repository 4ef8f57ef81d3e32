"""Random program and state generation, property registry, shrinking.

Programs are contiguous instruction blocks with the entry point at or
just before the block, ending in halt; load addresses are biased to
straddle the user/kernel boundary so faults are exercised.  Entangled
(state, history) pairs come from emitting a program, seeding a valid
cache, and running the history-carrying machine forward a bounded
number of steps.

Each registered property pairs a case generator with a checker over the
case; `run_property` drives seeded trials (per-trial streams are split
deterministically from the root seed, so reports are reproducible) and
shrinks failures while re-verifying that the same obligation still
fails.
"""

from __future__ import annotations

import json
import random
import zlib
from dataclasses import dataclass, replace
from typing import Callable

from .asm import Program, render
from .isa import MASK32, Instr, isa_det_step
from .ma import MaState, ma_step, step_core
from .refine import (
    AUTH_SPECS,
    Finding,
    check_cache_action,
    check_entangled_obligations,
    check_wsk_a_transition,
    check_wsk_transition,
    is_initial,
    label,
    r_ic,
)
from .variants import History, init_h, is_entangled, mah_step
from . import asm

FULL_ACCESS = ((0, MASK32),)


DEFAULT_WEIGHTS: tuple[tuple[str, int], ...] = (
    ("loadi", 18), ("addi", 8), ("add", 8), ("mul", 5), ("and", 4),
    ("cmp", 7), ("jg", 3), ("jge", 3), ("ldri", 14), ("ldr", 9),
    ("tsx-start", 4), ("tsx-end", 3), ("noop", 3), ("in-cache", 9),
)


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    trials: int = 100
    max_forward_steps: int = 40
    min_len: int = 2
    max_len: int = 12
    reg_pool: int = 6  # operands drawn from r0..r(pool-1)
    accessible_top: int = 0x7F
    include_in_cache: bool = True
    include_kernel: bool = True
    weights: tuple[tuple[str, int], ...] = DEFAULT_WEIGHTS
    sparse: bool = False
    max_failures: int = 10
    max_run_steps: int = 400


@dataclass(frozen=True)
class Case:
    """Replayable input to a property check."""

    program: Program
    forward_steps: int = 0
    seed_cache: tuple[tuple[int, int], ...] = ()


def _trial_rng(cfg_seed: int, prop: str, trial: int) -> random.Random:
    h = zlib.crc32(prop.encode())
    return random.Random(((cfg_seed * 0x9E3779B1) ^ (h * 0x85EBCA77)) + trial)


def _gen_const(cfg: GenConfig, rng: random.Random) -> int:
    top = cfg.accessible_top
    roll = rng.random()
    if roll < 0.4:
        return rng.randrange(0, max(2, top))
    if roll < 0.8 and cfg.include_kernel:
        # straddle the boundary so derived addresses fault
        return max(0, top + rng.randrange(-4, 8))
    return rng.randrange(0, 32)


def _gen_instr(cfg: GenConfig, rng: random.Random, length: int) -> Instr:
    ops = [(op, w) for op, w in cfg.weights
           if cfg.include_in_cache or op != "in-cache"]
    total = sum(w for _, w in ops)
    pick = rng.randrange(total)
    for op, w in ops:
        pick -= w
        if pick < 0:
            break
    r = lambda: rng.randrange(cfg.reg_pool)
    if op == "loadi":
        return Instr("loadi", rd=r(), imm=_gen_const(cfg, rng))
    if op == "addi":
        return Instr("addi", rd=r(), r1=r(), imm=rng.randrange(0, 8))
    if op in ("add", "mul", "and", "cmp"):
        return Instr(op, rd=r(), r1=r(), r2=r())
    if op in ("jg", "jge"):
        off = rng.choice([-3, -2, -1, 2, 3, 4])
        return Instr(op, r1=r(), imm=off & MASK32)
    if op == "ldri":
        if cfg.include_kernel and rng.random() < 0.4:
            # offset straddling the boundary: faults whenever the base
            # register is small
            imm = max(0, cfg.accessible_top + rng.randrange(-3, 8))
        else:
            imm = rng.randrange(0, 6)
        return Instr("ldri", rd=r(), r1=r(), imm=imm)
    if op == "ldr":
        return Instr("ldr", rd=r(), r1=r(), r2=r())
    if op == "tsx-start":
        return Instr("tsx-start", imm=rng.randrange(0, length + 2))
    if op == "tsx-end":
        return Instr("tsx-end")
    if op == "in-cache":
        return Instr("in-cache", rd=r(), r1=r(), r2=r())
    return Instr("noop")


def gen_program(cfg: GenConfig, rng: random.Random) -> Program:
    length = rng.randint(cfg.min_len, cfg.max_len)
    base = rng.randrange(0, 4)
    instrs = [_gen_instr(cfg, rng, length) for _ in range(length)]
    instrs.append(Instr("halt"))
    if cfg.include_kernel:
        access = ((0, cfg.accessible_top),)
        kernel_addr = cfg.accessible_top + 1 + rng.randrange(0, 64)
        data = [(kernel_addr, rng.randrange(1, 200))]
    else:
        access = FULL_ACCESS
        data = []
    for _ in range(rng.randrange(0, 4)):
        data.append((rng.randrange(0, cfg.accessible_top + 1), rng.randrange(0, 256)))
    if cfg.sparse:
        entry = base + rng.randrange(-4, length + 4)
    else:
        entry = base - rng.randrange(0, 2)
    entry = max(0, entry)
    return Program(base, tuple(instrs), tuple(data), access, entry)


def seed_cache(
    prog: Program, cfg: GenConfig, rng: random.Random
) -> tuple[tuple[int, int], ...]:
    """A valid cache: accessible addresses with their memory values."""
    ga = prog.ga
    dmem = prog.dmem
    pool = [a for a, _ in prog.data if ga.allows(a)]
    pool += [rng.randrange(0, cfg.accessible_top + 1) for _ in range(2)]
    picked = sorted({a for a in pool if ga.allows(a) and rng.random() < 0.5})
    return tuple((a, dmem.get(a, 0)) for a in picked)


def case_pair(case: Case) -> tuple[MaState, History]:
    """Deterministically rebuild the (state, history) pair of a case."""
    s = asm.emit_ma(case.program)
    if case.seed_cache:
        cache = dict(case.seed_cache)
        s = replace(s, cache=cache)
        h = History(s.cyc, s.cyc, dict(cache), {}, ())
    else:
        h = init_h(s)
    for _ in range(case.forward_steps):
        if s.halt:
            break
        s, h = mah_step(s, h)
    return s, h


def gen_entangled_case(cfg: GenConfig, rng: random.Random) -> Case:
    prog = gen_program(cfg, rng)
    cache = seed_cache(prog, cfg, rng)
    # Probe the halt time so most samples land mid-flight rather than on
    # the (trivially entangled) halted tail of the run.
    x = asm.emit_ma(prog)
    if cache:
        x = replace(x, cache=dict(cache))
    live = 0
    while live < cfg.max_forward_steps and not x.halt:
        x = ma_step(x)
        live += 1
    if x.halt:
        live -= 1
    if live > 0 and rng.random() < 0.8:
        k = rng.randint(1, live)
    else:
        k = rng.randint(0, cfg.max_forward_steps)
    return Case(prog, k, cache)


def gen_entangled(cfg: GenConfig, rng: random.Random) -> tuple[MaState, History]:
    """An entangled pair: emit, seed a committed cache, run forward."""
    return case_pair(gen_entangled_case(cfg, rng))


# --- property checkers over cases ---

def check_entangled_case(case: Case) -> list[Finding]:
    findings: list[Finding] = []
    # Emitted initial states (cold cache) pair with the empty history.
    s0 = asm.emit_ma(case.program)
    if not is_initial(s0):
        findings.append(Finding("init-entangled", "functional",
                                "emitted state is not pipeline-empty"))
    elif not is_entangled(s0, init_h(s0)):
        findings.append(Finding("init-entangled", "functional",
                                "emitted state not entangled with the "
                                "empty history"))
    pair = case_pair(case)
    findings.extend(check_entangled_obligations([pair]))
    return findings


def check_replay_case(case: Case) -> list[Finding]:
    s, h = case_pair(case)
    if not is_entangled(s, h):
        return [Finding("replay-identity", "functional",
                        f"replay failed to reproduce the state at cycle {s.cyc}")]
    return []


def _walk(case: Case, per_step, max_steps: int) -> list[Finding]:
    s, h = case_pair(replace(case, forward_steps=0))
    findings: list[Finding] = []
    for _ in range(max_steps):
        if s.halt:
            break
        findings.extend(per_step(s, h))
        if len(findings) >= 8:
            break
        s, h = mah_step(s, h)
    return findings


def check_wsk_case(case: Case, max_steps: int = 2500) -> list[Finding]:
    """Witness obligations (cache-erased map) along the whole run."""
    return _walk(case, check_wsk_transition, max_steps)


def check_spectre_case(case: Case, max_steps: int = 400) -> list[Finding]:
    """Cache-observable witness obligations plus the action audit under
    the designer-intent (commit-time) authorization policy."""
    spec = AUTH_SPECS["commit"]
    return _walk(case, lambda s, h: check_wsk_a_transition(s, h, spec), max_steps)


def check_action_writeback_case(case: Case, max_steps: int = 400) -> list[Finding]:
    """Sanity: the as-built policy authorizes everything this machine
    does (on kernel-free programs)."""

    def per_step(s, h):
        u, info = step_core(s)
        cex = check_cache_action(s, h, info, u, AUTH_SPECS["writeback"])
        return [cex] if cex else []

    return _walk(case, per_step, max_steps)


def check_arch_equiv_case(case: Case, max_steps: int = 2000) -> list[Finding]:
    """Run both machines to halt and compare the committed state."""
    isa = asm.emit_isa(case.program)
    for _ in range(max_steps):
        if isa.halt:
            break
        isa = isa_det_step(isa)
    if not isa.halt:
        return []  # non-terminating program: vacuous
    ma = asm.emit_ma(case.program)
    for _ in range(20 * max_steps):
        if ma.halt:
            break
        ma = ma_step(ma)
    if not ma.halt:
        return [Finding("arch-equivalence", "liveness",
                        "pipeline did not halt where the ISA run halted")]
    got, want = label(r_ic(ma)), label(isa)
    if got != want:
        return [Finding(
            "arch-equivalence", "functional",
            f"final state differs: pc {got.pc:#x}/{want.pc:#x} "
            f"rf {got.rf} vs {want.rf}",
        )]
    return []


def gen_incache_case(cfg: GenConfig, rng: random.Random) -> Case:
    """A probe of a random inaccessible address, with a seeded cache."""
    top = cfg.accessible_top
    kernel = top + 1 + rng.randrange(0, 1 << 16)
    split = rng.randrange(0, kernel + 1)
    instrs = (
        Instr("loadi", rd=1, imm=split),
        Instr("loadi", rd=2, imm=(kernel - split) & MASK32),
        Instr("in-cache", rd=3, r1=1, r2=2),
        Instr("halt"),
    )
    data = ((rng.randrange(0, top + 1), rng.randrange(0, 99)),)
    prog = Program(0, instrs, data, ((0, top),), 0)
    return Case(prog, 0, seed_cache(prog, cfg, rng))


def check_incache_case(case: Case) -> list[Finding]:
    s = asm.emit_isa(case.program)
    if case.seed_cache:
        s = replace(s, cache=dict(case.seed_cache))
    for _ in range(8):
        if s.halt:
            break
        s = isa_det_step(s)
    if s.rf[3] != 0:
        return [Finding("incache-constraint", "functional",
                        "in-cache returned 1 for an inaccessible address")]
    return []


# --- registry ---

@dataclass(frozen=True)
class Property:
    name: str
    gen: Callable[[GenConfig, random.Random], Case]
    check: Callable[[Case], list[Finding]]
    adjust: Callable[[GenConfig], GenConfig] = lambda c: c


def _no_ic(cfg: GenConfig) -> GenConfig:
    return replace(cfg, include_in_cache=False)


def _safe(cfg: GenConfig) -> GenConfig:
    return replace(cfg, include_in_cache=False, include_kernel=False)


PROPERTIES: dict[str, Property] = {
    p.name: p
    for p in [
        Property("entangled", gen_entangled_case, check_entangled_case),
        Property("replay-identity", gen_entangled_case, check_replay_case),
        Property("wsk", gen_entangled_case, check_wsk_case),
        Property("wsk-safe", gen_entangled_case, check_wsk_case, _no_ic),
        Property("spectre", gen_entangled_case, check_spectre_case, _no_ic),
        Property("action-writeback", gen_entangled_case,
                 check_action_writeback_case, _safe),
        Property("arch-equivalence", gen_entangled_case,
                 check_arch_equiv_case, _safe),
        Property("incache-constraint", gen_incache_case, check_incache_case),
    ]
}


@dataclass(frozen=True)
class Failure:
    trial: int
    findings: tuple[Finding, ...]
    case: Case


@dataclass(frozen=True)
class Report:
    prop: str
    seed: int
    trials: int
    failures: tuple[Failure, ...]

    @property
    def tea_count(self) -> int:
        return sum(1 for f in self.failures
                   if any(x.kind.startswith("tea-") for x in f.findings))

    @property
    def functional_count(self) -> int:
        return sum(1 for f in self.failures
                   if all(not x.kind.startswith("tea-") for x in f.findings))

    def to_dict(self) -> dict:
        return {
            "property": self.prop,
            "seed": self.seed,
            "trials": self.trials,
            "failures": [
                {
                    "trial": f.trial,
                    "findings": [
                        {"obligation": x.obligation, "kind": x.kind,
                         "detail": x.detail}
                        for x in f.findings
                    ],
                    "program": render(f.case.program),
                    "forward_steps": f.case.forward_steps,
                    "seed_cache": list(map(list, f.case.seed_cache)),
                }
                for f in self.failures
            ],
        }


def shrink(prop: Property, case: Case, obligation: str, budget: int = 150) -> Case:
    """Greedy reduction preserving failure of the same obligation."""

    def fails(c: Case) -> bool:
        return any(f.obligation == obligation for f in prop.check(c))

    best = case
    improved = True
    while improved and budget > 0:
        improved = False
        instrs = best.program.instrs
        for i in range(len(instrs)):
            cand_prog = replace(best.program, instrs=instrs[:i] + instrs[i + 1:])
            cand = replace(best, program=cand_prog)
            budget -= 1
            if fails(cand):
                best, improved = cand, True
                break
            if budget <= 0:
                break
        if improved:
            continue
        if best.forward_steps > 0:
            for k in (0, best.forward_steps // 2, best.forward_steps - 1):
                cand = replace(best, forward_steps=k)
                budget -= 1
                if fails(cand):
                    best, improved = cand, True
                    break
                if budget <= 0:
                    break
        if improved:
            continue
        # shrink immediates toward zero
        instrs = best.program.instrs
        for i, ins in enumerate(instrs):
            if ins.imm and ins.imm < 0x1000:
                cand_prog = replace(
                    best.program,
                    instrs=instrs[:i] + (replace(ins, imm=ins.imm // 2),)
                    + instrs[i + 1:],
                )
                cand = replace(best, program=cand_prog)
                budget -= 1
                if fails(cand):
                    best, improved = cand, True
                    break
                if budget <= 0:
                    break
    return best


def run_property(
    name: str,
    cfg: GenConfig,
    extra_cases: tuple[Case, ...] = (),
    do_shrink: bool = True,
) -> Report:
    """Seeded trials of one property; failures are shrunk and re-verified."""
    if name not in PROPERTIES:
        raise KeyError(f"unknown property {name!r}")
    prop = PROPERTIES[name]
    pcfg = prop.adjust(cfg)
    failures: list[Failure] = []

    def record(trial: int, case: Case, findings: list[Finding]) -> None:
        if do_shrink and findings:
            small = shrink(prop, case, findings[0].obligation)
            fs = prop.check(small)
            if any(f.obligation == findings[0].obligation for f in fs):
                case, findings = small, fs
        failures.append(Failure(trial, tuple(findings), case))

    for t, case in enumerate(extra_cases):
        findings = prop.check(case)
        if findings:
            record(-1 - t, case, findings)
    for i in range(pcfg.trials):
        rng = _trial_rng(pcfg.seed, name, i)
        case = prop.gen(pcfg, rng)
        findings = prop.check(case)
        if findings:
            record(i, case, findings)
            if len(failures) >= pcfg.max_failures:
                break
    return Report(name, pcfg.seed, pcfg.trials, tuple(failures))


def report_json(reports: list[Report], suite: str) -> str:
    doc = {
        "schema": "teasim-report/1",
        "suite": suite,
        "reports": [r.to_dict() for r in reports],
        "tea_count": sum(r.tea_count for r in reports),
        "functional_count": sum(r.functional_count for r in reports),
    }
    return json.dumps(doc, indent=2, sort_keys=True)
