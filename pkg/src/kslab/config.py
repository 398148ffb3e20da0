"""Plain-text run configuration: `key = value` lines, `#` comments.

Every subcommand owns a typed schema; parsing stops at the first problem
and reports it with its line number.  Unknown keys, malformed values and
out-of-range values are all configuration errors.  A float field may admit
the token ``auto`` when the natural default depends on other keys (grid
extents that scale with sqrt(t), the self-similar initial scale, ...);
``auto`` survives into the parameter map and is resolved by the command.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bubble import CUTOFF_KINDS
from .errors import ConfigError

__all__ = ["Field", "RunConfig", "SCHEMAS", "parse_config", "describe"]

_8PI = 8.0 * np.pi


@dataclass(frozen=True)
class Field:
    """One schema entry: type, default, admissible range or choices."""

    typ: type
    default: object
    lo: float | None = None
    hi: float | None = None
    choices: tuple | None = None
    auto: bool = False
    help: str = ""


@dataclass(frozen=True)
class RunConfig:
    """A validated run request: subcommand plus its parameter map."""

    subcommand: str
    params: dict
    out_dir: str = "kslab_out"
    threads: int = 1
    seed: int = 0

    def header_lines(self):
        """Echo of the effective configuration, defaults included."""
        lines = [f"# kslab {self.subcommand}"]
        lines.append(f"# out = {self.out_dir}  threads = {self.threads}  seed = {self.seed}")
        for key in sorted(self.params):
            lines.append(f"{key} = {_show(self.params[key])}")
        return lines


def _show(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


_CUTS = tuple(sorted(CUTOFF_KINDS))

SCHEMAS: dict[str, dict[str, Field]] = {
    "ansatz": {
        "t": Field(float, 1.0e4, lo=np.e, help="evaluation time"),
        "lam": Field(float, 0.3, lo=0.0, help="core scale"),
        "alpha": Field(float, "auto", auto=True, help="mass factor; auto = slaved value"),
        "cutoff": Field(str, "quintic_smoothstep", choices=_CUTS),
        "n": Field(int, 4096, lo=16, help="radial nodes for the r-table"),
        "r_max": Field(float, "auto", lo=0.0, auto=True, help="auto = 12.5 sqrt(t)"),
        "dr0": Field(float, "auto", lo=0.0, auto=True, help="auto = lam / 200"),
        "zeta_max": Field(float, 12.0, lo=1.0, help="extent of the zeta-table"),
        "n_zeta": Field(int, 1201, lo=16),
    },
    "moments": {
        "density": Field(str, "core", choices=("core", "half_core", "gaussian")),
        "n": Field(int, 2048, lo=16),
        "r_max": Field(float, 2.0e3, lo=1.0),
        "dr0": Field(float, 1.0e-3, lo=0.0),
    },
    "evolve": {
        "mass": Field(float, _8PI, lo=0.0, help="total mass"),
        "init": Field(str, "ansatz", choices=("ansatz", "bump")),
        "t0": Field(float, 1.0e3, lo=np.e),
        "t_end": Field(float, 1.0e4, lo=np.e),
        "lam0": Field(float, "auto", lo=0.0, auto=True, help="auto = 1/sqrt(log t0)"),
        "cutoff": Field(str, "quintic_smoothstep", choices=_CUTS),
        "n": Field(int, 4096, lo=64),
        "r_max": Field(float, "auto", lo=1.0, auto=True, help="auto = 10 sqrt(t_end)"),
        "dr0": Field(float, 5.0e-4, lo=0.0),
        "dt0": Field(float, 0.25, lo=0.0),
        "theta": Field(float, 0.4, lo=0.0, hi=10.0, help="dt <= theta * t / log^2 t"),
        "samples_per_decade": Field(int, 50, lo=1),
        "bump_width": Field(float, 1.0, lo=0.0),
    },
    "fit-rate": {
        "trajectory": Field(str, "", help="path to an evolve trajectory CSV"),
    },
    "spectrum": {
        "l_max": Field(int, 8, lo=2, hi=64),
        "modes": Field(int, 12, lo=1, help="random nonzero coefficients drawn"),
    },
    "inner-solve": {
        "m": Field(float, 5.0, lo=4.0, hi=6.0, help="source decay exponent"),
        "kind": Field(str, "rational", choices=("gaussian", "rational")),
        "n": Field(int, 3000, lo=64),
        "r_max": Field(float, 2.0e3, lo=10.0),
        "dr0": Field(float, 1.0e-3, lo=0.0),
    },
    "reduced-ode": {
        "t0": Field(float, 1.0e3, lo=np.e),
        "t_end": Field(float, 1.0e9, lo=np.e),
        "eta0": Field(float, "auto", lo=0.0, auto=True, help="auto = 1/log t0"),
        "slaving": Field(bool, True),
        "samples_per_decade": Field(int, 40, lo=2),
        "xi1": Field(float, 0.0, lo=-np.inf),
        "xi2": Field(float, 0.0, lo=-np.inf),
    },
    "verify-all": {
        "l_max": Field(int, 8, lo=2, hi=32),
    },
}


def _convert(raw: str, fld: Field, key: str, line_no: int):
    if fld.typ is bool:
        low = raw.lower()
        if low in ("true", "false"):
            return low == "true"
        raise ConfigError(f"line {line_no}: {key} expects true/false, got {raw!r}")
    if fld.typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(
                f"line {line_no}: {key} expects an integer, got {raw!r}"
            ) from None
    if fld.typ is float:
        if raw == "auto":
            if fld.auto:
                return "auto"
            raise ConfigError(f"line {line_no}: {key} does not admit 'auto'")
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"line {line_no}: {key} expects a number, got {raw!r}") from None
        if not np.isfinite(value):
            raise ConfigError(f"line {line_no}: {key} must be finite, got {raw!r}")
        return value
    return raw


def _check_range(value, fld: Field, key: str, line_no: int):
    if fld.choices is not None and value not in fld.choices:
        raise ConfigError(
            f"line {line_no}: {key} must be one of {', '.join(fld.choices)}; got {value!r}"
        )
    if isinstance(value, str) or isinstance(value, bool):
        return
    if fld.lo is not None and not value > fld.lo if fld.typ is float else False:
        pass
    if fld.typ is float:
        if fld.lo is not None and not value >= fld.lo:
            raise ConfigError(f"line {line_no}: {key} = {value:g} is below {fld.lo:g}")
        if fld.hi is not None and not value <= fld.hi:
            raise ConfigError(f"line {line_no}: {key} = {value:g} is above {fld.hi:g}")
    else:
        if fld.lo is not None and value < fld.lo:
            raise ConfigError(f"line {line_no}: {key} = {value} is below {int(fld.lo)}")
        if fld.hi is not None and value > fld.hi:
            raise ConfigError(f"line {line_no}: {key} = {value} is above {int(fld.hi)}")


def parse_config(
    text: str,
    subcommand: str = "verify-all",
    out_dir: str = "kslab_out",
    threads: int = 1,
    seed: int = 0,
) -> RunConfig:
    """Parse `key = value` text against the subcommand's schema.

    Returns the fully defaulted RunConfig; the first malformed line,
    unknown key, type mismatch, duplicate, or range violation raises
    ConfigError carrying its line number.
    """
    schema = SCHEMAS.get(subcommand)
    if schema is None:
        raise ConfigError(
            f"unknown subcommand {subcommand!r}; choose from {', '.join(sorted(SCHEMAS))}"
        )
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    params = {k: f.default for k, f in schema.items()}
    seen = set()
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw_line.strip()!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not key or not raw:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw_line.strip()!r}")
        fld = schema.get(key)
        if fld is None:
            raise ConfigError(f"line {line_no}: unknown key {key!r} for {subcommand!r}")
        if key in seen:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        seen.add(key)
        value = _convert(raw, fld, key, line_no)
        if value != "auto":
            _check_range(value, fld, key, line_no)
        params[key] = value
    return RunConfig(
        subcommand=subcommand, params=params, out_dir=out_dir, threads=threads, seed=seed
    )


def describe(subcommand: str) -> str:
    """Human-readable schema listing for --help style output."""
    schema = SCHEMAS.get(subcommand)
    if schema is None:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    lines = []
    for key, fld in schema.items():
        bits = [f"{key} ({fld.typ.__name__}, default {_show(fld.default)})"]
        if fld.choices:
            bits.append("one of " + "/".join(str(c) for c in fld.choices))
        if fld.help:
            bits.append(fld.help)
        lines.append("  " + " — ".join(bits))
    return "\n".join(lines)
