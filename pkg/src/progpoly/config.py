"""TOML configuration for ``progpoly gen`` and ``progpoly bench-convergence``.

A generation config::

    function = "log2"
    seed = 0
    max_iterations = 200

    [output]
    artifact = "out/log2.json"
    report = "out/log2.report.json"

    [[rung]]
    format = "bfloat16"
    terms = 3

    [[rung]]
    format = "tensorfloat32"
    terms = 4
    interval = "ro"

Top-level keys mirror GeneratorConfig (``seed`` is accepted for ``rng_seed``).
Relative output paths resolve against the config file's directory.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .constraints import Rung
from .formats import FpFormat
from .generator import GeneratorConfig
from .oracle import FunctionId

_GEN_KEYS = {f.name for f in fields(GeneratorConfig)} - {"function", "ladder"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OutputPaths:
    artifact: Path
    report: Path
    figures: Path | None = None
    source: bool = False


@dataclass(frozen=True)
class GenJob:
    generator: GeneratorConfig
    output: OutputPaths


@dataclass(frozen=True)
class BenchJob:
    ks: tuple[int, ...] = (3, 4, 6)
    ns: tuple[int, ...] = (10_000, 100_000)
    seeds: int = 20
    max_iterations: int = 5000
    workers: int | None = None
    report: Path = Path("bench.json")
    csv: Path | None = None
    figures: Path | None = None


def _read(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None


def _resolve(base: Path, p) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else base / p


def _rung(entry: dict) -> Rung:
    unknown = set(entry) - {"format", "terms", "interval"}
    if unknown:
        raise ConfigError(f"unknown rung keys: {sorted(unknown)}")
    try:
        interval = {"rn-only": "rn"}.get(entry.get("interval", "ro"), entry.get("interval", "ro"))
        return Rung(FpFormat.parse(entry["format"]), int(entry["terms"]), interval)
    except KeyError as e:
        raise ConfigError(f"rung needs {e.args[0]!r}") from None


def parse_gen_config(data: dict, base: Path = Path(".")) -> GenJob:
    data = dict(data)
    if "function" not in data:
        raise ConfigError("config needs 'function'")
    if data.pop("fma", False):
        raise ConfigError("fused multiply-add kernels are not supported; the generator validates plain Horner")
    function = FunctionId.parse(data.pop("function"))
    rungs = data.pop("rung", None)
    if not rungs:
        raise ConfigError("config needs at least one [[rung]]")
    ladder = tuple(_rung(r) for r in rungs)
    out = data.pop("output", {})
    if "seed" in data:
        if "rng_seed" in data:
            raise ConfigError("give either 'seed' or 'rng_seed'")
        data["rng_seed"] = data.pop("seed")
    unknown = set(data) - _GEN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if isinstance(data.get("violation_fraction"), str):
        data["violation_fraction"] = Fraction(data["violation_fraction"])
    try:
        gen = GeneratorConfig(function, ladder, **data)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    artifact = _resolve(base, out.get("artifact", f"{function.value}.json"))
    report = _resolve(base, out["report"]) if "report" in out else artifact.with_suffix(".report.json")
    paths = OutputPaths(artifact, report, _resolve(base, out.get("figures")), bool(out.get("source", False)))
    return GenJob(gen, paths)


def load_gen_config(path: Path) -> GenJob:
    path = Path(path)
    return parse_gen_config(_read(path), path.parent)


def parse_bench_config(data: dict, base: Path = Path(".")) -> BenchJob:
    data = dict(data)
    out = data.pop("output", {})
    known = {"ks", "ns", "seeds", "max_iterations", "workers"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown bench keys: {sorted(unknown)}")
    kw = dict(data)
    for key in ("ks", "ns"):
        if key in kw:
            kw[key] = tuple(int(v) for v in kw[key])
    return BenchJob(**kw, report=_resolve(base, out.get("report", "bench.json")),
                    csv=_resolve(base, out.get("csv")), figures=_resolve(base, out.get("figures")))


def load_bench_config(path: Path) -> BenchJob:
    path = Path(path)
    return parse_bench_config(_read(path), path.parent)
