"""INI-style problem files: materials per region, conditions per facet tag,
solver settings.

Example::

    [solver]
    safety = 0.5
    t_end = 20.0
    output_every = 50

    [region 0]
    name = cast
    rho = 2700
    c = 300:900, 933:1100
    k = 210
    latent_heat = 3.9e5
    solidus = 900
    liquidus = 933
    T0 = 1000

    [bc cast_if]
    type = interface
    h = 1500

    [bc outside]
    type = convection
    h = 20
    T_inf = 300

Tables are written ``x:y`` pairs separated by commas; a bare number is a
constant. Boundary types: ``fixed`` (``value``), ``convection`` (``q``,
``h``, ``T_inf``), ``interface`` (``h``, ``variable``), ``adiabatic``.
"""
from __future__ import annotations

import configparser

from .errors import ConfigurationError
from .fem import (Adiabatic, Convection, FixedTemperature, InterfaceCondition, Material,
                  Problem, SolverConfig, Table)


def parse_table(text):
    text = text.strip()
    if ":" not in text:
        return float(text)
    pts = []
    for item in text.split(","):
        x, _, y = item.partition(":")
        try:
            pts.append((float(x), float(y)))
        except ValueError:
            raise ConfigurationError(f"bad table entry {item.strip()!r}") from None
    return Table([p[0] for p in pts], [p[1] for p in pts])


def _float(sec, key, default=None):
    if key not in sec:
        if default is None:
            raise ConfigurationError(f"[{sec.name}] needs {key!r}")
        return default
    try:
        return float(sec[key])
    except ValueError:
        raise ConfigurationError(f"[{sec.name}] {key} is not a number") from None


def _material(sec):
    kw = {}
    for key in ("latent_heat", "solidus", "liquidus", "T0"):
        if key in sec:
            kw[key] = _float(sec, key)
    if "t_range" in sec:
        lo, hi = (float(v) for v in sec["t_range"].split(","))
        kw["t_range"] = (lo, hi)
    for key in ("rho", "c", "k"):
        if key not in sec:
            raise ConfigurationError(f"[{sec.name}] needs {key!r}")
    return Material(_float(sec, "rho"), parse_table(sec["c"]), parse_table(sec["k"]),
                    name=sec.get("name"), **kw)


def _condition(sec):
    kind = sec.get("type", "").strip().lower()
    if kind == "fixed":
        if "value" not in sec:
            raise ConfigurationError(f"[{sec.name}] needs 'value'")
        return FixedTemperature(parse_table(sec["value"]))
    if kind == "convection":
        return Convection(_float(sec, "q", 0.0), _float(sec, "h", 0.0), _float(sec, "T_inf", 0.0))
    if kind == "interface":
        return InterfaceCondition(parse_table(sec.get("h", "0")), sec.get("variable", "time"))
    if kind == "adiabatic":
        return Adiabatic()
    raise ConfigurationError(f"[{sec.name}] unknown boundary type {kind!r}")


def parse_config(text):
    """Return ``(materials, conditions, SolverConfig)`` from INI text."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case (T0, T_inf)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(str(exc)) from None
    materials, conditions = {}, {}
    solver = SolverConfig()
    for name in cp.sections():
        sec = cp[name]
        head, _, arg = name.partition(" ")
        if head == "region":
            try:
                rid = int(arg)
            except ValueError:
                raise ConfigurationError(f"bad region id in [{name}]") from None
            materials[rid] = _material(sec)
        elif head == "bc":
            if not arg.strip():
                raise ConfigurationError("[bc] section needs a tag")
            conditions[arg.strip()] = _condition(sec)
        elif head == "solver":
            solver = SolverConfig(
                theta=_float(sec, "theta", 0.0),
                safety=_float(sec, "safety", solver.safety),
                t_end=_float(sec, "t_end", solver.t_end),
                output_every=int(_float(sec, "output_every", 0.0)),
                length_scale=sec.get("length_scale", solver.length_scale))
        else:
            raise ConfigurationError(f"unknown section [{name}]")
    return materials, conditions, solver


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def load_problem(mesh, path) -> Problem:
    materials, conditions, solver = load_config(path)
    return Problem(mesh, materials, conditions, solver)


def format_table(tab):
    tab = Table.coerce(tab)
    if tab.x.size == 1:
        return repr(float(tab.y[0]))
    return ", ".join(f"{x!r}:{y!r}" for x, y in zip(tab.x.tolist(), tab.y.tolist()))


def dump_config(materials, conditions, solver: SolverConfig = None):
    """Inverse of :func:`parse_config` for materials and conditions whose
    tables are numeric (callable fixed values cannot be written)."""
    solver = SolverConfig() if solver is None else solver
    out = ["[solver]", f"theta = {solver.theta!r}", f"safety = {solver.safety!r}", f"t_end = {solver.t_end!r}",
           f"output_every = {solver.output_every}", f"length_scale = {solver.length_scale}", ""]
    for rid in sorted(materials):
        m = materials[rid]
        out.append(f"[region {rid}]")
        if m.name:
            out.append(f"name = {m.name}")
        out += [f"rho = {m.rho!r}", f"c = {format_table(m.c)}", f"k = {format_table(m.k)}"]
        if m.latent_heat:
            out += [f"latent_heat = {m.latent_heat!r}", f"solidus = {m.solidus!r}",
                    f"liquidus = {m.liquidus!r}"]
        if m.T0 is not None:
            out.append(f"T0 = {m.T0!r}")
        out += [f"t_range = {m.t_min!r}, {m.t_max!r}", ""]
    for tag in sorted(conditions):
        bc = conditions[tag]
        out.append(f"[bc {tag}]")
        if isinstance(bc, FixedTemperature):
            if callable(bc.value) and not isinstance(bc.value, Table):
                raise ConfigurationError(f"cannot write callable condition on {tag!r}")
            out += ["type = fixed", f"value = {format_table(bc.value)}"]
        elif isinstance(bc, Convection):
            out += ["type = convection", f"q = {bc.q!r}", f"h = {bc.h!r}", f"T_inf = {bc.T_inf!r}"]
        elif isinstance(bc, InterfaceCondition):
            out += ["type = interface", f"h = {format_table(bc.h)}", f"variable = {bc.variable}"]
        else:
            out.append("type = adiabatic")
        out.append("")
    return "\n".join(out)
