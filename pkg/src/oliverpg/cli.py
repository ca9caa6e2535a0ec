"""Command-line surface: versioned text/JSON input, deterministic JSON/text
reports, theorem monitors appended to every run, and the exit-code contract
(0 = all asserted facts pass, 1 = usage/capacity error, 2 = counterexample
candidate, always with a machine-verifiable certificate block).
"""

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    CapExceeded,
    InputFormatError,
    OliverError,
    TheoremViolation,
    UnsupportedInstance,
)
from .linalg import FpMatrix, FieldSpec, det_mod
from .groups import (
    DEFAULT_CAP,
    ExplicitGroup,
    close,
    maximal_elementary_abelian,
    thompson_subgroup,
    upper_central_series,
)
from .action import SemidirectContext, find_offenders, default_series
from .characteristic import (
    check_conjecture,
    compute_Baum,
    compute_Je,
    compute_Xk,
    monitors_fired,
    run_monitors,
    verify_chain,
)
from . import corpus as corpus_mod

TOOL_VERSION = "1.0"
INPUT_FORMAT = "oliver-input v1"
REPORT_FORMAT = "oliver-report v1"

COMMANDS = (
    "check",
    "xk",
    "je",
    "baum",
    "offenders",
    "two-subnormal",
    "normalw",
    "replace-thompson",
    "replace-glauberman",
    "monitors",
    "corpus",
)


# ---------------------------------------------------------------------------
# Input parsing
# ---------------------------------------------------------------------------


@dataclass
class InputDocument:
    p: int
    module_dim: int | None
    generators: list  # list of square int lists

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(
                {
                    "p": self.p,
                    "module_dim": self.module_dim,
                    "generators": self.generators,
                },
                sort_keys=True,
                separators=(",", ":"),
            ).encode()
        ).hexdigest()


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    i = 2
    while i * i <= n:
        if n % i == 0:
            return False
        i += 1
    return True


def _validate_document(p, module_dim, gens) -> InputDocument:
    if not _is_prime(p):
        raise InputFormatError(f"p = {p} is not prime")
    if p == 2:
        raise InputFormatError("p = 2 is not supported (odd primes only)")
    if not gens:
        raise InputFormatError("at least one generator is required")
    dims = {len(g) for g in gens}
    if len(dims) != 1:
        raise InputFormatError("generators have mixed dimensions")
    n = dims.pop()
    for k, g in enumerate(gens, 1):
        if any(len(row) != n for row in g):
            raise InputFormatError(f"generator {k} is not square")
        if det_mod(np.array(g, dtype=np.int64) % p, p) == 0:
            raise InputFormatError(f"generator {k} is not invertible mod {p}")
    if module_dim is not None and module_dim != n:
        raise InputFormatError(
            f"module-dim {module_dim} does not match generator dimension {n}"
        )
    canon = [(np.array(g, dtype=np.int64) % p).tolist() for g in gens]
    return InputDocument(p=p, module_dim=module_dim, generators=canon)


def parse_input(text: str) -> InputDocument:
    """Parse the versioned text format, or its JSON mirror when the document
    starts with '{'."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"invalid JSON input: {exc}")
        if obj.get("format") != INPUT_FORMAT:
            raise InputFormatError(
                f"JSON input must declare format {INPUT_FORMAT!r}"
            )
        return _validate_document(
            obj.get("p"), obj.get("module_dim"), obj.get("generators", [])
        )

    lines = text.splitlines()
    p = None
    module_dim = None
    gens = []
    cur = None
    header_seen = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if line != INPUT_FORMAT:
                raise InputFormatError(
                    f"line {lineno}: expected header {INPUT_FORMAT!r}, got {line!r}"
                )
            header_seen = True
            continue
        tokens = line.split()
        if tokens[0] == "p":
            if len(tokens) != 2 or not tokens[1].lstrip("-").isdigit():
                raise InputFormatError(f"line {lineno}: malformed 'p' directive")
            p = int(tokens[1])
        elif tokens[0] == "module-dim":
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise InputFormatError(
                    f"line {lineno}: malformed 'module-dim' directive"
                )
            module_dim = int(tokens[1])
        elif tokens[0] == "gen":
            if len(tokens) != 1:
                raise InputFormatError(f"line {lineno}: 'gen' takes no arguments")
            cur = []
            gens.append(cur)
        else:
            if cur is None:
                raise InputFormatError(
                    f"line {lineno}: matrix row outside a 'gen' block"
                )
            try:
                cur.append([int(t) for t in tokens])
            except ValueError:
                raise InputFormatError(
                    f"line {lineno}: non-integer entry in matrix row"
                )
    if not header_seen:
        raise InputFormatError("empty document (missing header line)")
    if p is None:
        raise InputFormatError("missing 'p' directive")
    return _validate_document(p, module_dim, gens)


def export_text(doc: InputDocument) -> str:
    lines = [INPUT_FORMAT, f"p {doc.p}"]
    if doc.module_dim is not None:
        lines.append(f"module-dim {doc.module_dim}")
    for g in doc.generators:
        lines.append("gen")
        for row in g:
            lines.append(" ".join(str(x) for x in row))
    return "\n".join(lines) + "\n"


def export_json_doc(doc: InputDocument) -> str:
    return json.dumps(
        {
            "format": INPUT_FORMAT,
            "p": doc.p,
            "module_dim": doc.module_dim,
            "generators": doc.generators,
        },
        indent=2,
        sort_keys=True,
    )


def build_targets(doc: InputDocument, cap: int):
    """(group, context): the closure of the generators, and the module
    context on their natural module."""
    fs = FieldSpec(doc.p)
    mats = [FpMatrix(np.array(g, dtype=np.int64), doc.p) for g in doc.generators]
    group = close(fs, mats, cap=cap)
    return group, SemidirectContext(group)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


def _plain(obj):
    """Recursively convert numpy scalars/arrays so json can serialize."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _gens_of(handle, group) -> list:
    return [group.arr()[i].tolist() for i in handle.gens_idx]


def _monitor_entries(outcomes) -> list:
    return [
        {
            "name": m.name,
            "applicable": m.applicable,
            "passed": m.passed,
            "detail": _plain(m.detail),
            "certificate": _plain(m.certificate),
        }
        for m in outcomes
    ]


def render_text(report: dict) -> str:
    out = []
    out.append(f"{report['format']}  command={report['command']}")
    if "instance_digest" in report:
        out.append(f"instance {report['instance_digest']}")
    if "error" in report:
        out.append(f"error: {report['error']}")
    for key, val in sorted(report.get("results", {}).items()):
        out.append(f"  {key}: {json.dumps(val, sort_keys=True)}")
    for fact in report.get("facts", []):
        mark = "pass" if fact["passed"] else "FAIL"
        out.append(f"fact [{mark}] {fact['name']}")
    for m in report.get("monitors", []):
        state = (
            "not applicable"
            if not m["applicable"]
            else ("pass" if m["passed"] else "FIRED")
        )
        out.append(f"monitor [{state}] {m['name']}")
    if report.get("certificate") is not None:
        out.append("certificate:")
        out.append(json.dumps(report["certificate"], indent=2, sort_keys=True))
    out.append(f"exit {report['exit_code']}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------


def _cmd_check(group, ctx, doc, args):
    target = ctx if doc.module_dim is not None else group
    rep = check_conjecture(target, args.k, mode=args.mode, cap=args.cap)
    results = {
        "p": rep.p,
        "k": rep.k,
        "mode": rep.mode,
        "verdict": rep.verdict,
        "xk_order": rep.xk_order,
        "je_order": rep.je_order,
        "details": _plain(rep.details),
    }
    cert = None
    if rep.counterexample:
        cert = {
            "claim": "J_e(S) <= X_k(S) fails at k = p",
            "p": rep.p,
            "k": rep.k,
            "details": _plain(rep.details),
        }
    facts = [
        {
            "name": "conjecture verdict J_e(S) <= X_k(S)",
            "passed": rep.verdict,
        }
    ]
    return results, facts, cert


def _cmd_xk(group, ctx, doc, args):
    if doc.module_dim is not None:
        s = ctx.explicit_group(args.cap)
        coords = "affine-embedded"
    else:
        s, coords = group, "input"
    xk, chain = compute_Xk(s, args.k)
    ver = verify_chain(s, chain)
    results = {
        "k": args.k,
        "order": xk.order,
        "chain_orders": [t.order for t in chain.terms],
        "coordinates": coords,
        "generators": _gens_of(xk, s),
    }
    facts = [{"name": "certificate chain re-verifies", "passed": bool(ver)}]
    cert = None
    if not ver:
        cert = {
            "claim": "X_k certificate chain failed re-verification",
            "failing_index": ver.failing_index,
            "reason": ver.reason,
        }
    return results, facts, cert


def _cmd_je(group, ctx, doc, args):
    if doc.module_dim is not None:
        red = compute_Je(ctx)
        results = {
            "reduction": "J_e(S) <= V iff no offender",
            "le_V": red.le_V,
            "offender_count": len(red.offenders),
        }
        facts = [{"name": "offender sweep completed", "passed": True}]
        return results, facts, None
    je = compute_Je(group)
    results = {
        "order": je.order,
        "coordinates": "input",
        "generators": _gens_of(je, group),
    }
    return results, [], None


def _cmd_baum(group, ctx, doc, args):
    baum = compute_Baum(group)
    results = {
        "order": baum.order,
        "coordinates": "input",
        "generators": _gens_of(baum, group),
    }
    return results, [], None


def _cmd_offenders(group, ctx, doc, args):
    offs = find_offenders(
        ctx,
        quadratic_only=args.quadratic,
        two_subnormal_only=args.two_subnormal,
    )
    entries = []
    for o in offs:
        entries.append(
            {
                "order": o.E.order,
                "fixed_dim": o.fixed.dim,
                "defect": o.defect,
                "quadratic": o.quadratic,
                "two_subnormal": o.two_subnormal,
                "generators": _gens_of(o.E, group),
            }
        )
    results = {
        "count": len(entries),
        "quadratic_only": args.quadratic,
        "two_subnormal_only": args.two_subnormal,
        "offenders": entries,
    }
    return results, [], None


def _cmd_two_subnormal(group, ctx, doc, args):
    from .replacement import two_subnormal_offender

    winner = two_subnormal_offender(ctx)
    results = {
        "order": winner.E.order,
        "fixed_dim": winner.fixed.dim,
        "defect": winner.defect,
        "generators": _gens_of(winner.E, group),
    }
    facts = [
        {"name": "E offends", "passed": True},
        {"name": "E is quadratic on V", "passed": True},
        {"name": "E is 2-subnormal", "passed": winner.two_subnormal},
    ]
    return results, facts, None


def _cmd_normalw(group, ctx, doc, args):
    from .replacement import normalW

    wit = normalW(ctx)
    results = {
        "E_order": wit.E.order,
        "N_order": wit.N.order,
        "chain_orders": [t.order for t in wit.chain],
        "depth_j": wit.j,
        "W_order": wit.W.order,
        "generators": _gens_of(wit.W, group),
    }
    facts = [
        {"name": "W elementary abelian and normal", "passed": True},
        {"name": "dichotomy [W,x] = 1 or [W,x,x] != 1 for all x", "passed": True},
    ]
    return results, facts, None


def _series_terms(group, which: str):
    if which == "upper":
        return upper_central_series(group)
    return None


def _cmd_replace_thompson(group, ctx, doc, args):
    from .replacement import thompson_step
    from .errors import HypothesisFailed, NonAbelianBracket

    series = _series_terms(group, args.series)
    maxes = maximal_elementary_abelian(group)
    reps = [cls[0] for cls in group.conjugacy_classes()]
    applied = 0
    improved = 0
    skipped = 0
    first = None
    for a in maxes:
        for v in reps:
            if v == group.identity_idx:
                continue
            try:
                a_star = thompson_step(group, a, v, central_series=series)
            except (HypothesisFailed, NonAbelianBracket):
                skipped += 1
                continue
            applied += 1
            if a_star.key != a.key:
                improved += 1
                if first is None:
                    first = {
                        "A_order": a.order,
                        "A_star_order": a_star.order,
                        "v": group.arr()[v].tolist(),
                    }
    results = {
        "series": args.series,
        "ambient_order": group.order,
        "applied": applied,
        "changed": improved,
        "skipped": skipped,
        "first_change": first,
    }
    facts = [
        {"name": "all replacement inequalities held", "passed": True},
    ]
    return results, facts, None


def _cmd_replace_glauberman(group, ctx, doc, args):
    from .replacement import build_lie_ring, glauberman_replace
    from .errors import ClassTooHigh, PreconditionFailed

    # The engine runs inside the carrier <A, A^b, A^(b^2)>, so each candidate
    # pair gets its own (cached) carrier group and Lie ring.
    series = upper_central_series(group) if args.series == "upper" else None
    series_list = [series] if series is not None else None
    arr = group.arr()
    maxes = maximal_elementary_abelian(group)
    # sweep b over the input generators: bounded, deterministic, and in
    # input coordinates
    reps = list(dict.fromkeys(int(i) for i in group._gen_idx))
    succeeded = 0
    changed = 0
    failures = {}
    first = None
    rings = {}

    def fail(name):
        failures[name] = failures.get(name, 0) + 1

    for a in maxes:
        a_mats = arr[a.idx]
        for b in reps:
            if b == group.identity_idx:
                continue
            bm = FpMatrix(arr[b], doc.p)
            bi = bm.inverse().a
            c1 = np.matmul(np.matmul(bi[None], a_mats) % doc.p, arr[b][None]) % doc.p
            c2 = np.matmul(np.matmul(bi[None], c1) % doc.p, arr[b][None]) % doc.p
            gens = np.unique(
                np.concatenate([a_mats, c1, c2]).reshape(-1, a_mats.shape[1] ** 2),
                axis=0,
            )
            carrier_key = gens.tobytes()
            if carrier_key not in rings:
                carrier = close(
                    FieldSpec(doc.p),
                    [FpMatrix(g.reshape(a_mats.shape[1], -1), doc.p) for g in gens],
                    cap=args.cap,
                )
                try:
                    rings[carrier_key] = (carrier, build_lie_ring(carrier))
                except (ClassTooHigh, UnsupportedInstance):
                    rings[carrier_key] = (carrier, None)
            carrier, ring = rings[carrier_key]
            if ring is None:
                fail("class")
                continue
            a_in = carrier.subgroup_from_gens(
                [int(i) for i in np.unique(carrier.lookup_rows(a_mats))]
            )
            try:
                a_star = glauberman_replace(ring, a_in, bm, series_list=series_list)
            except PreconditionFailed as exc:
                fail(exc.name)
                continue
            succeeded += 1
            if a_star.key != a_in.key:
                changed += 1
                if first is None:
                    first = {
                        "A_order": a_in.order,
                        "A_star_order": a_star.order,
                        "carrier_order": carrier.order,
                        "b": arr[b].tolist(),
                    }
    results = {
        "series": args.series,
        "carriers": len(rings),
        "succeeded": succeeded,
        "changed": changed,
        "precondition_failures": dict(sorted(failures.items())),
        "first_change": first,
    }
    facts = [
        {"name": "every certified Lie ring passed log/exp, BCH, closure", "passed": True},
        {"name": "all replacement postconditions held", "passed": True},
    ]
    return results, facts, None


def _cmd_monitors(group, ctx, doc, args):
    results = {"p": doc.p, "group_order": group.order}
    return results, [], None  # monitors are appended by the driver anyway


_DISPATCH = {
    "check": _cmd_check,
    "xk": _cmd_xk,
    "je": _cmd_je,
    "baum": _cmd_baum,
    "offenders": _cmd_offenders,
    "two-subnormal": _cmd_two_subnormal,
    "normalw": _cmd_normalw,
    "replace-thompson": _cmd_replace_thompson,
    "replace-glauberman": _cmd_replace_glauberman,
    "monitors": _cmd_monitors,
}


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors (2 means counterexample)
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="oliverpg", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument(
        "input",
        nargs="?",
        help="input file ('-' for stdin); for 'corpus', the instance name",
    )
    parser.add_argument("--k", type=int, default=3)
    parser.add_argument(
        "--mode", choices=("auto", "explicit", "semidirect"), default="auto"
    )
    parser.add_argument(
        "--cap",
        type=int,
        default=int(os.environ.get("OLIVER_CAP", DEFAULT_CAP)),
    )
    parser.add_argument("--series", choices=("default", "upper"), default="default")
    parser.add_argument("--json", action="store_true")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--quadratic", action="store_true")
    parser.add_argument("--two-subnormal", dest="two_subnormal", action="store_true")
    parser.add_argument("--list", dest="list_corpus", action="store_true")
    # deliberately undocumented: falsifies the offender-emptiness evaluation
    # so the mutation test can prove the monitors fire
    parser.add_argument(
        "--corrupt-offender-check", action="store_true", help=argparse.SUPPRESS
    )
    return parser


def _run_corpus(args, out) -> int:
    if args.list_corpus or not args.input:
        names = corpus_mod.instance_names()
        if args.json:
            out.write(json.dumps({"instances": names}, indent=2) + "\n")
        else:
            out.write("\n".join(names) + "\n")
        return 0
    obj = corpus_mod.get_instance(args.input)
    doc = parse_input(corpus_mod.export_input_text(obj))
    out.write(export_json_doc(doc) + "\n" if args.json else export_text(doc))
    return 0


def run(command: str, doc: InputDocument, args) -> dict:
    """Dispatch one command on a parsed document and assemble the report."""
    t0 = time.perf_counter()
    group, ctx = build_targets(doc, args.cap)
    results, facts, certificate = _DISPATCH[command](group, ctx, doc, args)
    monitors = _monitor_entries(
        run_monitors(ctx, k=args.k, corrupt=args.corrupt_offender_check)
    )
    fired = any(m["applicable"] and not m["passed"] for m in monitors)
    if fired and certificate is None:
        certificate = next(
            m["certificate"] for m in monitors if not m["passed"]
        )
    bad_fact = any(not f["passed"] for f in facts)
    exit_code = 2 if (certificate is not None or fired or bad_fact) else 0
    report = {
        "format": REPORT_FORMAT,
        "tool_version": TOOL_VERSION,
        "command": command,
        "instance_digest": doc.digest(),
        "flags": {
            "k": args.k,
            "mode": args.mode,
            "cap": args.cap,
            "series": args.series,
            "threads": args.threads,
        },
        "results": _plain(results),
        "facts": facts,
        "monitors": monitors,
        "certificate": _plain(certificate),
        "exit_code": exit_code,
        "timings": {"total_s": round(time.perf_counter() - t0, 6)},
    }
    return report


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out = sys.stdout
    try:
        if args.command == "corpus":
            return _run_corpus(args, out)
        if not args.input:
            sys.stderr.write("error: an input document is required\n")
            return 1
        if args.input == "-":
            text = sys.stdin.read()
        else:
            with open(args.input) as fh:
                text = fh.read()
        doc = parse_input(text)
        report = run(args.command, doc, args)
    except TheoremViolation as exc:
        cert = _plain(exc.certificate) if exc.certificate else {"claim": str(exc)}
        block = {
            "format": REPORT_FORMAT,
            "tool_version": TOOL_VERSION,
            "command": args.command,
            "error": str(exc),
            "certificate": cert,
            "exit_code": 2,
        }
        out.write(
            json.dumps(block, indent=2, sort_keys=True) + "\n"
            if args.json
            else render_text(block)
        )
        return 2
    except (InputFormatError, UnsupportedInstance, CapExceeded, OliverError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    if args.json:
        out.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    else:
        out.write(render_text(report))
    return report["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
