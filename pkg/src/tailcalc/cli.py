"""Batch front-end: parse a problem document, run the solvers, emit reports.

Usage:
    tailcalc <command> --in spec.json --out report.json [--mode exact|float]
             [--pretty]

Commands: expand, stopped-sum, queue, branching, infdiv, renewal,
implicit-renewal, classify-2rv, validate.  Reports are deterministic JSON
(rerunning a job produces a byte-identical file); volatile metadata such as
timestamps goes to a `<out>.meta.json` sidecar.  Exit codes: 0 ok, 1 parse
error, 2 precondition violation, 3 indeterminate classification,
4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
from pathlib import Path
from typing import Any, Mapping

import sympy

from . import __version__
from . import apps, engine, oracle, tails
from .engine import (
    DivergenceError,
    EngineError,
    ExpansionRequest,
    PreconditionError,
    WeightSequence,
)
from .laplace import MomentVector
from .oracle import McConfig
from .scale import IncomparableExponentsError
from .tails import (
    DistributionSpec,
    MomentExistenceError,
    TailVector,
    UnsupportedFamilyError,
)

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_PRECONDITION = 2
EXIT_INDETERMINATE = 3
EXIT_INTERNAL = 4

COMMANDS = (
    "expand",
    "stopped-sum",
    "queue",
    "branching",
    "infdiv",
    "renewal",
    "implicit-renewal",
    "classify-2rv",
    "validate",
)


class ParseError(ValueError):
    pass


class IndeterminateOutcome(Exception):
    def __init__(self, report: dict):
        self.report = report


def _sympify(value, mode: str):
    try:
        expr = tails.parse_scalar(value)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ParseError(f"cannot parse value {value!r}") from exc
    if mode == "exact" and expr.atoms(sympy.Float):
        raise PreconditionError(
            f"exact mode rejects non-rational numeric value {value!r}"
        )
    return expr


def _render(expr) -> dict:
    expr = sympy.sympify(expr)
    out: dict[str, Any] = {"exact": str(expr)}
    if expr.is_number:
        try:
            out["float"] = float(expr.evalf())
        except (TypeError, ValueError):
            out["float"] = None
    else:
        out["float"] = None
    return out


def _render_tail(tv: TailVector) -> dict:
    return {
        "scale": [{"a": str(it.a), "b": str(it.b)} for it in tv.basis.items],
        "cutoff": str(tv.basis.cutoff),
        "coefficients": [_render(c) for c in tv.p],
    }


def _parse_distribution(doc: Mapping, mode: str) -> DistributionSpec:
    try:
        raw = dict(doc)
        family = raw["family"]
    except (KeyError, TypeError) as exc:
        raise ParseError("distribution document needs a 'family'") from exc
    params = {
        k: _sympify(v, mode)
        for k, v in raw.get("params", {}).items()
        if k != "terms"
    }
    lower = raw.get("lower_tail")
    moments_doc = raw.get("moments")
    if family == "power-series":
        params["terms"] = tuple(
            tuple(_sympify(x, mode) for x in term) for term in raw["params"]["terms"]
        )
    return DistributionSpec(
        family=family,
        params=params,
        sign=raw.get("sign", "nonnegative"),
        lower_terms=tuple(
            tuple(_sympify(x, mode) for x in t) for t in lower
        )
        if lower is not None
        else None,
        moment_values=tuple(_sympify(x, mode) for x in moments_doc)
        if moments_doc is not None
        else None,
    )


def _parse_weights(doc: Mapping, mode: str) -> WeightSequence:
    try:
        kind = doc["kind"]
    except (KeyError, TypeError) as exc:
        raise ParseError("weights document needs a 'kind'") from exc
    if kind == "explicit":
        return WeightSequence(
            kind="explicit", values=tuple(_sympify(v, mode) for v in doc["values"])
        )
    if kind == "ar1":
        return WeightSequence(kind="ar1", a=_sympify(doc["a"], mode))
    if kind == "maq":
        return WeightSequence(
            kind="maq", phi=tuple(_sympify(v, mode) for v in doc["phi"])
        )
    if kind == "generic":
        return WeightSequence(kind="generic")
    raise ParseError(f"unknown weight kind {kind!r}")


def _parse_request(doc: Mapping, mode: str) -> ExpansionRequest:
    return ExpansionRequest(
        m=int(doc["m"]),
        k=int(doc.get("k", 0)),
        omega=_sympify(doc["omega"], mode) if "omega" in doc else None,
        gamma=_sympify(doc["gamma"], mode) if "gamma" in doc else None,
        log_depth=int(doc["log_depth"]) if "log_depth" in doc else None,
    )


def _parse_moments(doc, mode: str) -> MomentVector:
    return MomentVector(
        tuple(_sympify(x, mode) for x in doc), synthetic=True
    )


# ---------------------------------------------------------------------------
# Command handlers (each returns the report dict)


def _cmd_expand(doc: Mapping, mode: str) -> dict:
    spec = _parse_distribution(doc["distribution"], mode)
    w = _parse_weights(doc["weights"], mode)
    req = _parse_request(doc["request"], mode)
    route = doc.get("route", "convolution")
    if route == "direct":
        tv = engine.expand_direct(w, spec, req)
    elif route == "convolution":
        tv = engine.expand_convolution(w, spec, req)
    else:
        raise ParseError(f"unknown route {route!r}")
    return {"route": route, "expansion": _render_tail(tv)}


def _count_moments(doc: Mapping, mode: str, order: int) -> MomentVector:
    kind = doc.get("kind", "moments")
    if kind == "poisson":
        return apps.poisson_count_moments(_sympify(doc["a"], mode), order)
    if kind == "geometric":
        return apps.geometric_count_moments(_sympify(doc["a"], mode), order)
    if kind == "moments":
        return MomentVector(tuple(_sympify(x, mode) for x in doc["values"]))
    raise ParseError(f"unknown count kind {kind!r}")


def _apply_on_closed_scale(
    spec: DistributionSpec, m: int, coeffs, mode: str
) -> TailVector:
    """Apply a D-operator to the innovation tail on its closed scale."""
    single = WeightSequence(kind="explicit", values=(1,))
    base = engine.expand_convolution(single, spec, ExpansionRequest(m=m))
    return apps.apply_operator(coeffs, base)


def _cmd_stopped_sum(doc: Mapping, mode: str) -> dict:
    spec = _parse_distribution(doc["distribution"], mode)
    m = int(doc["m"])
    fm = tails.moments(spec, m)
    nm = _count_moments(doc["count"], mode, m + 1)
    coeffs = apps.stopped_sum_operator(nm, fm, m)
    tv = _apply_on_closed_scale(spec, m, coeffs, mode)
    return {
        "operator": [_render(c) for c in coeffs],
        "expansion": _render_tail(tv),
    }


def _cmd_queue(doc: Mapping, mode: str) -> dict:
    service = _parse_distribution(doc["service"], mode)
    mean_arrival = _sympify(doc["mean_interarrival"], mode)
    m = int(doc["m"])
    n_terms = int(doc.get("n_terms", m + 1))
    coeffs = apps.mg1_waiting_tail(service, mean_arrival, m)
    tv = apps.mg1_waiting_expansion(service, mean_arrival, m, n_terms)
    return {
        "load": _render(apps.mg1_load(service, mean_arrival)),
        "operator": [_render(c) for c in coeffs],
        "expansion": _render_tail(tv),
    }


def _cmd_branching(doc: Mapping, mode: str) -> dict:
    spec = _parse_distribution(doc["distribution"], mode)
    rho = _sympify(doc["rho"], mode)
    m = int(doc["m"])
    fm = tails.moments(spec, m)
    coeffs = apps.branching_intensity(fm, rho, m)
    tv = _apply_on_closed_scale(spec, m, coeffs, mode)
    return {
        "operator": [_render(c) for c in coeffs],
        "expansion": _render_tail(tv),
    }


def _cmd_infdiv(doc: Mapping, mode: str) -> dict:
    levy = _parse_distribution(doc["levy_tail"], mode)
    m = int(doc["m"])
    gm = _parse_moments(doc["g_moments"], mode)
    single = WeightSequence(kind="explicit", values=(1,))
    base = engine.expand_convolution(single, levy, ExpansionRequest(m=m))
    tv = apps.infdiv_tail(base, gm, m)
    return {"expansion": _render_tail(tv)}


def _cmd_renewal(doc: Mapping, mode: str) -> dict:
    prob = apps.RenewalProblem(
        h=_parse_distribution(doc["h"], mode),
        k=_parse_distribution(doc["k"], mode),
        m=int(doc["m"]),
        a=_sympify(doc["a"], mode),
    )
    lf, tv = apps.renewal_solve(prob)
    return {
        "solution_character": [_render(c) for c in lf.coeff],
        "solution_moments": [_render(c) for c in lf.moments],
        "tail": _render_tail(tv),
    }


def _cmd_implicit_renewal(doc: Mapping, mode: str) -> dict:
    prob = apps.RenewalProblem(
        h=_parse_distribution(doc["h"], mode),
        k=_parse_distribution(doc["k"], mode),
        m=int(doc["m"]),
    )
    fm, tv = apps.implicit_renewal_solve(prob)
    return {
        "moments": [_render(c) for c in fm.mu],
        "tail": _render_tail(tv),
    }


def _cmd_classify(doc: Mapping, mode: str) -> dict:
    so_doc = doc["second_order"]
    a_raw = so_doc["a_limit"]
    a_limit = sympy.oo if a_raw in ("oo", "inf") else _sympify(a_raw, mode)
    so = apps.SecondOrderSpec(
        alpha=_sympify(so_doc["alpha"], mode),
        rho2=_sympify(so_doc["rho2"], mode),
        a_limit=a_limit,
        p=_sympify(so_doc.get("p", 1), mode),
        q=_sympify(so_doc.get("q", 0), mode),
    )
    w = _parse_weights(doc["weights"], mode)
    fm = _parse_moments(doc["moments"], mode)
    res = apps.second_order_classify(so, w, fm)
    report = {
        "classification": {
            "outcome": res.outcome,
            "case": res.case,
            "condition_value": _render(res.condition_value),
            "second_order_coefficient": _render(res.second_order_coefficient)
            if res.second_order_coefficient is not None
            else None,
            "gstar_order": res.gstar_order,
            "xi": res.xi,
        }
    }
    if res.indeterminate:
        raise IndeterminateOutcome(report)
    return report


def _cmd_validate(doc: Mapping, mode: str) -> dict:
    spec = _parse_distribution(doc["distribution"], mode)
    w = _parse_weights(doc["weights"], mode)
    req = _parse_request(doc["request"], mode)
    tv = engine.expand_convolution(w, spec, req)
    mc_doc = doc["mc"]
    cfg = McConfig(
        n_samples=int(mc_doc["n_samples"]),
        thresholds=tuple(float(t) for t in mc_doc["thresholds"]),
        seed=int(mc_doc.get("seed", 0)),
        truncation=int(mc_doc.get("truncation", 32)),
        shards=int(mc_doc.get("shards", 256)),
    )
    result = oracle.mc_tail(w, spec, cfg)
    nonzero = [i for i, c in enumerate(tv.p) if c != 0]
    rows = []
    for row, bias in zip(result.rows, result.truncation_bias_bound):
        preds = {}
        for depth in range(1, len(nonzero) + 1):
            preds[f"expansion_{depth}term"] = tv.evaluate(row.threshold, n_terms=depth)
        rows.append(
            {
                "threshold": row.threshold,
                "estimate": row.estimate,
                "ci_lo": row.ci_lo,
                "ci_hi": row.ci_hi,
                "hits": row.hits,
                "truncation_bias_bound": bias,
                **preds,
            }
        )
    return {
        "expansion": _render_tail(tv),
        "mc": {
            "n_samples": result.n_samples,
            "seed": cfg.seed,
            "shards": cfg.shards,
            "truncation": cfg.truncation,
        },
        "validation": rows,
        "n_prediction_terms": len(nonzero),
    }


HANDLERS = {
    "expand": _cmd_expand,
    "stopped-sum": _cmd_stopped_sum,
    "queue": _cmd_queue,
    "branching": _cmd_branching,
    "infdiv": _cmd_infdiv,
    "renewal": _cmd_renewal,
    "implicit-renewal": _cmd_implicit_renewal,
    "classify-2rv": _cmd_classify,
    "validate": _cmd_validate,
}


def _write_report(report: dict, out_path: Path, pretty: bool) -> None:
    if pretty:
        text = json.dumps(report, indent=2, sort_keys=True)
    else:
        text = json.dumps(report, sort_keys=True, separators=(",", ":"))
    out_path.write_text(text + "\n")
    meta = {
        "written_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "tailcalc_version": __version__,
    }
    Path(str(out_path) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def _write_validation_csv(report: dict, csv_path: Path) -> None:
    rows = report["validation"]
    if not rows:
        return
    fields = ["threshold", "estimate", "ci_lo", "ci_hi"]
    fields += [k for k in rows[0] if k.startswith("expansion_")]
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in fields})


def run(command: str, in_path: Path, out_path: Path, mode: str, pretty: bool) -> int:
    """Execute one job; returns the process exit code."""
    try:
        doc = json.loads(in_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read job input: {exc}", file=sys.stderr)
        return EXIT_PARSE

    handler = HANDLERS[command]
    try:
        body = handler(doc, mode)
        exit_code = EXIT_OK
    except IndeterminateOutcome as outcome:
        body = outcome.report
        exit_code = EXIT_INDETERMINATE
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (KeyError, TypeError) as exc:
        print(f"error: malformed job document ({exc!r})", file=sys.stderr)
        return EXIT_PARSE
    except (
        PreconditionError,
        DivergenceError,
        MomentExistenceError,
        UnsupportedFamilyError,
        IncomparableExponentsError,
        oracle.SamplerError,
        EngineError,
    ) as exc:
        print(f"error: precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except Exception as exc:  # internal invariant breach
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL

    report = {
        "command": command,
        "mode": mode,
        "provenance": {"input": doc, "source": str(in_path)},
        **body,
    }
    _write_report(report, out_path, pretty)
    if command == "validate":
        _write_validation_csv(report, out_path.with_suffix(".csv"))
    return exit_code


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tailcalc",
        description="Asymptotic tail expansions for weighted sums of "
        "heavy-tailed random variables",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--in", dest="in_path", required=True, type=Path)
    parser.add_argument("--out", dest="out_path", required=True, type=Path)
    parser.add_argument("--mode", choices=("exact", "float"), default="exact")
    parser.add_argument("--pretty", action="store_true")
    args = parser.parse_args(argv)
    return run(args.command, args.in_path, args.out_path, args.mode, args.pretty)


if __name__ == "__main__":
    sys.exit(main())
