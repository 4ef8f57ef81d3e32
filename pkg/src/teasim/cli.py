"""Command-line front end.

Subcommands: `run` simulates a program on either machine, `check` runs
the obligation suites, `demo` walks the two bundled attacks, `bench`
measures step throughput, `replay` re-verifies a counterexample bundle.

Exit codes: 0 success / all checks passed, 1 counterexamples found,
2 usage or internal error, 3 step budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace

from . import asm, snapshot
from .gen import Case, GenConfig, PROPERTIES, Report, report_json, run_property
from .isa import isa_det_step
from .ma import MaParams, ma_step, step_core
from .variants import init_h, mah_step, mah_step_info

SUITES: dict[str, list[str]] = {
    "entangled": ["entangled", "replay-identity"],
    "meltdown-buggy": ["wsk"],
    "meltdown-safe": ["wsk-safe"],
    "spectre-buggy": ["spectre"],
    "all": ["entangled", "replay-identity", "wsk", "wsk-safe", "spectre",
            "action-writeback", "arch-equivalence", "incache-constraint"],
}

# Bundled seed programs per property, checked before the random trials.
PROP_SEEDS: dict[str, list[str]] = {
    "wsk": ["meltdown"],
    "spectre": ["spectre"],
}


def _parse_params(path: str | None, overrides: list[str]) -> MaParams:
    kv: dict[str, str] = {}
    if path:
        with open(path) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    k, v = line.split("=", 1)
                    kv[k.strip()] = v.strip()
    for item in overrides:
        k, v = item.split("=", 1)
        kv[k] = v
    base = MaParams()
    fields = {}
    for k, v in kv.items():
        k = k.replace("-", "_")
        if k == "prefetch":
            toks = v.split()
            fields["prefetch"] = tuple([toks[0]] + [int(x) for x in toks[1:]])
        elif k in ("fetch_num", "max_rob", "rs_count", "reg_count"):
            fields[k] = int(v)
        else:
            raise SystemExit(f"unknown parameter {k!r}")
    return replace(base, **fields) if fields else base


def _load_program(path: str):
    with open(path) as fh:
        return asm.parse(fh.read())


def cmd_run(args) -> int:
    try:
        prog = _load_program(args.program)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    params = _parse_params(args.params, args.param)

    if args.machine == "isa":
        s = asm.emit_isa(prog, params.reg_count)
        for step in range(args.max_steps):
            if s.halt:
                break
            s = isa_det_step(s)
        print(snapshot.isa_to_text(s), end="")
        return 0 if s.halt else 3

    s = asm.emit_ma(prog, params)
    h = init_h(s) if args.machine == "ma-h" else None
    for step in range(args.max_steps):
        if s.halt:
            break
        if args.trace:
            if h is not None:
                nxt, h, info = mah_step_info(s, h)
            else:
                nxt, info = step_core(s)
            delta = {a: v for a, v in nxt.cache.items() if s.cache.get(a) != v}
            print(snapshot.trace_record(s.cyc, info, delta))
            s = nxt
        elif h is not None:
            s, h = mah_step(s, h)
        else:
            s = ma_step(s)
    print(snapshot.ma_to_text(s), end="")
    if h is not None:
        print(snapshot.history_to_text(h), end="")
    return 0 if s.halt else 3


def _suite_reports(suite: str, cfg: GenConfig) -> list[Report]:
    reports = []
    for prop in SUITES[suite]:
        seeds = tuple(
            Case(asm.load_bundled(name)) for name in PROP_SEEDS.get(prop, [])
        )
        reports.append(run_property(prop, cfg, extra_cases=seeds))
    return reports


def cmd_check(args) -> int:
    if args.suite not in SUITES:
        print(f"error: unknown suite {args.suite!r}; have "
              + ", ".join(sorted(SUITES)), file=sys.stderr)
        return 2
    if args.replay:
        return _replay_bundle(args.replay, args.json)
    cfg = GenConfig(seed=args.seed, trials=args.trials)
    try:
        reports = _suite_reports(args.suite, cfg)
    except Exception as e:  # internal error: distinct exit code
        print(f"internal error: {e}", file=sys.stderr)
        return 2
    doc = report_json(reports, args.suite)
    if args.json:
        print(doc)
    else:
        _print_human(reports, args.suite)
    if args.bundle_dir:
        _write_bundles(reports, args.bundle_dir, args.suite)
    found = any(r.failures for r in reports)
    return 1 if found else 0


def _print_human(reports: list[Report], suite: str) -> None:
    print(f"suite {suite}")
    for r in reports:
        print(f"  {r.prop}: {r.trials} trials, {len(r.failures)} failing case(s), "
              f"{r.tea_count} transient-execution, {r.functional_count} functional")
        for f in r.failures[:5]:
            head = f.findings[0]
            print(f"    trial {f.trial}: [{head.obligation}/{head.kind}] {head.detail}")


def _write_bundles(reports: list[Report], outdir: str, suite: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    for r in reports:
        for f in r.failures:
            path = os.path.join(outdir, f"{suite}-{r.prop}-{f.trial}.bundle")
            with open(path, "w") as fh:
                fh.write("%teasim-bundle\n")
                fh.write(f"property {r.prop}\n")
                fh.write(f"forward-steps {f.case.forward_steps}\n")
                for a, v in f.case.seed_cache:
                    fh.write(f"seed-cache {a:#x}:{v:#x}\n")
                for x in f.findings:
                    fh.write(f"finding {x.obligation} {x.kind} {x.detail}\n")
                fh.write("%program\n")
                fh.write(asm.render(f.case.program))


def _replay_bundle(path: str, as_json: bool) -> int:
    with open(path) as fh:
        text = fh.read()
    head, _, prog_text = text.partition("%program\n")
    prop_name = None
    forward = 0
    cache = []
    for line in head.splitlines():
        toks = line.split()
        if not toks:
            continue
        if toks[0] == "property":
            prop_name = toks[1]
        elif toks[0] == "forward-steps":
            forward = int(toks[1])
        elif toks[0] == "seed-cache":
            a, v = toks[1].split(":")
            cache.append((int(a, 16), int(v, 16)))
    if prop_name is None or prop_name not in PROPERTIES:
        print("error: bundle names no known property", file=sys.stderr)
        return 2
    case = Case(asm.parse(prog_text), forward, tuple(cache))
    findings = PROPERTIES[prop_name].check(case)
    doc = {
        "schema": "teasim-replay/1",
        "property": prop_name,
        "findings": [
            {"obligation": f.obligation, "kind": f.kind, "detail": f.detail}
            for f in findings
        ],
    }
    if as_json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        if findings:
            for f in findings:
                print(f"[{f.obligation}/{f.kind}] {f.detail}")
        else:
            print("bundle no longer fails")
    return 1 if findings else 0


def cmd_demo(args) -> int:
    if args.attack == "meltdown":
        prog = asm.load_bundled("meltdown")
        secret = dict(prog.data)[4096]
        ma = asm.emit_ma(prog)
        for _ in range(args.max_steps):
            if ma.halt:
                break
            ma = ma_step(ma)
        isa = asm.emit_isa(prog)
        for _ in range(args.max_steps):
            if isa.halt:
                break
            isa = isa_det_step(isa)
        print(f"planted kernel byte:            {secret}")
        print(f"pipeline run recovered (r10):   {ma.rf[10]}"
              f"   kernel line cached (r7): {ma.rf[7]}")
        print(f"architectural run (r10):        "
              f"{'none' if isa.rf[10] == 0xFFFFFFFF else isa.rf[10]}"
              f"   kernel line cached (r7): {isa.rf[7]}")
        ok = ma.rf[10] == secret and isa.rf[10] == 0xFFFFFFFF
        print("exfiltration " + ("succeeded on the pipeline, impossible "
                                 "architecturally" if ok else "UNEXPECTED"))
        return 0 if ok else 2

    if args.attack == "spectre":
        from .refine import AUTH_SPECS, check_cache_action
        prog = asm.load_bundled("spectre")
        s = asm.emit_ma(prog)
        h = init_h(s)
        spec = AUTH_SPECS["commit"]
        shown = 0
        for _ in range(args.max_steps):
            if s.halt:
                break
            u, hu, info = mah_step_info(s, h)
            cex = check_cache_action(s, h, info, u, spec)
            if cex is not None and shown < 3:
                print(f"cycle {s.cyc}: {cex.detail}")
                shown += 1
            s, h = u, hu
        isa = asm.emit_isa(prog)
        for _ in range(args.max_steps):
            if isa.halt:
                break
            isa = isa_det_step(isa)
        print(f"pipeline cache after run:      "
              + ", ".join(f"{a:#x}" for a in sorted(s.cache)))
        print(f"architectural cache after run: "
              + (", ".join(f"{a:#x}" for a in sorted(isa.cache)) or "(empty)"))
        ok = shown > 0 and not isa.cache
        print("speculative fills are unauthorized under the commit-time "
              "policy" if ok else "UNEXPECTED")
        return 0 if ok else 2

    print(f"error: unknown attack {args.attack!r}", file=sys.stderr)
    return 2


def _bench_one(step, state, halted, reset, budget_s: float) -> float:
    n = 0
    t0 = time.perf_counter()
    s = state
    while True:
        for _ in range(512):
            if halted(s):
                s = reset()
            s = step(s)
        n += 512
        dt = time.perf_counter() - t0
        if dt >= budget_s:
            return n / dt


def cmd_bench(args) -> int:
    prog = asm.load_bundled("primality")
    isa0 = asm.emit_isa(prog)
    ma0 = asm.emit_ma(prog)
    isa_rate = _bench_one(isa_det_step, isa0, lambda s: s.halt,
                          lambda: isa0, args.seconds)
    ma_rate = _bench_one(ma_step, ma0, lambda s: s.halt, lambda: ma0,
                         args.seconds)
    ratio = isa_rate / ma_rate if ma_rate else float("inf")
    print(f"architectural: {isa_rate:,.0f} steps/s")
    print(f"pipeline:      {ma_rate:,.0f} steps/s")
    print(f"ratio:         {ratio:.1f}x")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="teasim")
    sub = parser.add_subparsers(dest="cmd", required=True)
    default_seed = int(os.environ.get("TEA_SEED", "0"))

    p = sub.add_parser("run", help="simulate a program")
    p.add_argument("program")
    p.add_argument("--machine", choices=["isa", "ma", "ma-h"], default="ma")
    p.add_argument("--max-steps", type=int, default=100_000)
    p.add_argument("--trace", action="store_true")
    p.add_argument("--params", help="key=value parameter file")
    p.add_argument("--param", action="append", default=[],
                   help="single key=value override")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("check", help="run obligation suites")
    p.add_argument("--suite", default="all")
    p.add_argument("--trials", type=int, default=300)
    p.add_argument("--seed", type=int, default=default_seed)
    p.add_argument("--json", action="store_true")
    p.add_argument("--bundle-dir", help="write counterexample bundles here")
    p.add_argument("--replay", help="re-verify a counterexample bundle")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("demo", help="walk a bundled attack")
    p.add_argument("attack", choices=["meltdown", "spectre"])
    p.add_argument("--max-steps", type=int, default=100_000)
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("bench", help="step throughput on the primality program")
    p.add_argument("--seconds", type=float, default=1.0)
    p.set_defaults(fn=cmd_bench)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
