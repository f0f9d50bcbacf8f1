"""Command line entry point: ``progpoly gen | check | sweep | bench-convergence | export | eval``.

Every command prints a JSON summary on stdout and exits 0 only when everything
it was asked to check passed.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import ConfigError, load_bench_config, load_gen_config
from .formats import FpFormat, FpValue, IEEE_MODES, RoundingMode, parse_modes
from .generator import GenerationFailed, generate
from .reports import bench_rows, conformance_rows, trace_rows, write_csv, write_json
from .runtime import CompiledFunction, UnsupportedFormat, export_compiled
from .validator import ConformanceReport, check_exhaustive, check_progressive, convergence_bench, ro_theorem_check, sweep

log = logging.getLogger("progpoly")


def _emit(summary: dict) -> None:
    click.echo(json.dumps(summary, indent=2, sort_keys=True, default=str))


def _load(path: Path) -> CompiledFunction:
    try:
        return CompiledFunction.load(path)
    except (OSError, ValueError, KeyError) as e:
        raise click.ClickException(f"cannot load {path}: {e}")


def _parse_fmt(ctx, param, value):
    try:
        return tuple(FpFormat.parse(v) for v in value)
    except ValueError as e:
        raise click.BadParameter(str(e))


def _parse_modes(ctx, param, value):
    if value is None:
        return IEEE_MODES
    try:
        return parse_modes(value)
    except ValueError as e:
        raise click.BadParameter(str(e))


def _write_conformance(report: ConformanceReport, out: Path | None, csv_path: Path | None,
                       figure: Path | None) -> dict:
    d = report.to_dict()
    paths = {}
    if out:
        paths["report"] = str(write_json(out, d))
    if csv_path:
        paths["csv"] = str(write_csv(csv_path, conformance_rows(d)))
    if figure:
        from .plotting import plot_conformance
        paths["figure"] = str(plot_conformance(d, figure))
    return paths


def _conformance_summary(report: ConformanceReport) -> dict:
    failed = [{"fmt": r.fmt, "mode": r.mode, "mismatches": r.mismatches} for r in report.results if not r.passed]
    return {"passed": report.passed, "checks": len(report.results), "failed": failed,
            "wall_time": round(report.wall_time, 3)}


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Progressive polynomial generator and validator for small floating-point formats."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def gen(config: Path) -> None:
    """Generate a progressive polynomial from a TOML config."""
    try:
        job = load_gen_config(config)
    except (ConfigError, ValueError) as e:
        raise click.ClickException(str(e))
    out = job.output
    try:
        poly, report = generate(job.generator, progress=log.info)
    except GenerationFailed as e:
        rep = e.report.to_dict()
        write_json(out.report, rep)
        _emit({"success": False, "error": str(e), "report": str(out.report), "attempts": rep["attempts"]})
        sys.exit(1)
    out.artifact.parent.mkdir(parents=True, exist_ok=True)
    info = export_compiled(poly, out.artifact, emit_source=out.source)
    rep = report.to_dict()
    rep["artifact"] = info
    write_json(out.report, rep)
    write_csv(out.report.with_suffix(".trace.csv"), trace_rows(rep))
    if out.figures:
        from .plotting import plot_trace
        info["trace_figure"] = str(plot_trace(rep, out.figures / f"{poly.function.value}_trace.png"))
    _emit({"success": True, "function": poly.function.value, "terms": report.final_terms,
           "subdomains": report.subdomains, "special_cases": len(poly.special_cases), "n_v": report.n_v,
           "iterations": report.iterations, "lucky": report.lucky, "wall_time": round(report.wall_time, 3),
           "artifact": str(out.artifact), "report": str(out.report), "json_bytes": info["json_bytes"],
           "table_bytes": info["table_bytes"]})


def _report_options(f):
    f = click.option("--figure", type=click.Path(path_type=Path), help="Write a mismatch grid (PNG).")(f)
    f = click.option("--csv", "csv_path", type=click.Path(path_type=Path), help="Write a CSV summary.")(f)
    f = click.option("--report", type=click.Path(path_type=Path), help="Write the full JSON report.")(f)
    f = click.option("--cache-dir", type=click.Path(path_type=Path), help="Oracle result cache.")(f)
    return f


@main.command()
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--fmt", "fmts", multiple=True, callback=_parse_fmt,
              help="Format to check, e.g. fp(16,8) or bfloat16; repeatable. Default: every rung.")
@click.option("--modes", callback=_parse_modes, help="Comma-separated rounding modes (default rn,ra,rz,ru,rd).")
@click.option("--progressive/--full", default=True,
              help="Rung formats at their own term counts (default) or every format at the full count.")
@_report_options
def check(artifact, fmts, modes, progressive, cache_dir, report, csv_path, figure) -> None:
    """Exhaustively compare an artifact against the oracle."""
    cf = _load(artifact)
    top = len(cf.poly.rungs) - 1
    rep = ConformanceReport()
    try:
        if fmts:
            for fmt in fmts:
                rung = None if progressive else top
                if not progressive:
                    cf.rung_for(fmt)  # same exponent width and not wider than the ladder
                rep.extend(check_exhaustive(cf, fmt, modes, rung=rung, cache_dir=cache_dir))
        else:
            for j, r in enumerate(cf.poly.rungs):
                rep.extend(check_exhaustive(cf, r.fmt, modes, rung=j if progressive else top, cache_dir=cache_dir))
    except UnsupportedFormat as e:
        raise click.ClickException(str(e))
    summary = _conformance_summary(rep)
    summary.update(_write_conformance(rep, report, csv_path, figure))
    _emit(summary)
    sys.exit(0 if rep.passed else 1)


@main.command("sweep")
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--modes", callback=_parse_modes, help="Comma-separated rounding modes (default all five).")
@click.option("--min-bits", type=int, help="Narrowest total width (default exponent bits + 2).")
@_report_options
def sweep_cmd(artifact, modes, min_bits, cache_dir, report, csv_path, figure) -> None:
    """Check every F(k, E) up to the widest rung with the full term count."""
    cf = _load(artifact)
    rep = sweep(cf, min_bits, modes, cache_dir)
    summary = _conformance_summary(rep)
    summary["formats"] = sorted({r.fmt for r in rep.results}, key=lambda s: FpFormat.parse(s).total_bits)
    summary.update(_write_conformance(rep, report, csv_path, figure))
    _emit(summary)
    sys.exit(0 if rep.passed else 1)


@main.command("bench-convergence")
@click.argument("spec", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def bench_convergence(spec: Path) -> None:
    """Iteration counts and lucky frequency on synthetic full-rank systems."""
    try:
        job = load_bench_config(spec)
    except (ConfigError, ValueError, TypeError) as e:
        raise click.ClickException(str(e))
    result = convergence_bench(job.ks, job.ns, job.seeds, job.max_iterations, job.workers)
    write_json(job.report, result)
    rows = bench_rows(result)
    out = {"passed": result["passed"], "groups": rows, "report": str(job.report)}
    if job.csv:
        out["csv"] = str(write_csv(job.csv, rows))
    if job.figures:
        from .plotting import plot_convergence
        out["figure"] = str(plot_convergence(result, job.figures / "convergence.png"))
    _emit(out)
    sys.exit(0 if result["passed"] else 1)


@main.command()
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path),
              help="Destination JSON (default: rewrite in place).")
@click.option("--emit-source", is_flag=True, help="Also write a C source file with the table and kernel.")
def export(artifact, out, emit_source) -> None:
    """Re-emit a verified artifact in canonical form, optionally with portable source."""
    cf = _load(artifact)
    info = export_compiled(cf, out or artifact, emit_source=emit_source)
    info["terms"] = cf.term_counts()
    info["subdomains"] = len(cf.poly.coefficients)
    info["special_cases"] = len(cf.poly.special_cases)
    _emit(info)


@main.command("eval")
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("inputs", nargs=-1, required=True)
@click.option("--fmt", "fmt", default="bfloat16", help="Input (and default output) format.")
@click.option("--out-fmt", default=None, help="Output format (default: the input format).")
@click.option("--mode", default="rn", help="Rounding mode.")
def eval_cmd(artifact, inputs, fmt, out_fmt, mode) -> None:
    """Evaluate at hex input encodings, e.g. 0x3F80; prints output encodings."""
    cf = _load(artifact)
    try:
        in_fmt = FpFormat.parse(fmt)
        o_fmt = FpFormat.parse(out_fmt) if out_fmt else in_fmt
        rmode = RoundingMode.parse(mode)
    except ValueError as e:
        raise click.BadParameter(str(e))
    width = (o_fmt.total_bits + 3) // 4
    rows = []
    for text in inputs:
        try:
            x = FpValue(in_fmt, int(text, 16))
        except ValueError as e:
            raise click.BadParameter(f"{text}: {e}")
        try:
            y = cf.evaluate(x, o_fmt, rmode)
        except UnsupportedFormat as e:
            raise click.ClickException(str(e))
        rows.append({"input": text, "x": repr(float(x)), "output": f"0x{y.bits:0{width}X}", "y": repr(float(y))})
    _emit({"function": cf.function.value, "fmt": in_fmt.spelling, "out_fmt": o_fmt.spelling, "mode": rmode.value,
           "results": rows})


@main.command("ro-check")
@click.option("--bits", "n", default=19, show_default=True, help="Widest format width n.")
@click.option("--exponent-bits", default=8, show_default=True)
@click.option("--samples", default=1_000_000, show_default=True, help="Random rationals on top of the boundaries.")
@click.option("--seed", default=0, show_default=True)
@click.option("--report", type=click.Path(path_type=Path))
def ro_check(n, exponent_bits, samples, seed, report) -> None:
    """Double rounding through round-to-odd at n+2 bits against direct rounding."""
    r = ro_theorem_check(n, exponent_bits, samples, seed)
    if report:
        write_json(report, r)
    _emit(r)
    sys.exit(0 if r["passed"] else 1)


if __name__ == "__main__":
    main()
