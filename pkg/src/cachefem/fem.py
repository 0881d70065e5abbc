"""Element-level physics for explicit conduction with phase change.

The discrete system is ``C(T) dT/dt + K(T) T = F(T)`` with a row-sum lumped
(diagonal) capacitance, stepped fully explicitly::

    T_next = T + dt * r / C,    r = F - K T

Everything here is matrix-free: :func:`assemble_local` produces the lumped
``C`` and the residual ``r`` for a set of elements from element data alone,
so the same kernel serves the global sweep, a cache block, or one worker's
partition.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SolverError
from .mesh import (Mesh, SisterPairing, pair_sister_facets, shortest_edge, tet_geometry_batch,
                   triangle_area)

log = logging.getLogger(__name__)

# relative size of a nodal temperature spread treated as "no spread at all"
RANGE_EPS = 1e-9
# |grad T|^2 threshold, relative to (spread / element size)^2
GRAD_EPS = 1e-14


class Table:
    """Piecewise-linear function of one variable, held constant outside
    its breakpoints."""

    def __init__(self, x, y=None):
        if y is None:
            x, y = [0.0], [float(x)]
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if x.shape != y.shape or x.size == 0:
            raise ConfigurationError("table needs matching, non-empty x and y")
        if np.any(np.diff(x) <= 0):
            raise ConfigurationError("table abscissae must be strictly increasing")
        self.x = x
        self.y = y

    @classmethod
    def constant(cls, value):
        return cls([0.0], [float(value)])

    @classmethod
    def coerce(cls, value):
        if isinstance(value, Table):
            return value
        if np.isscalar(value):
            return cls.constant(value)
        pts = np.asarray(value, dtype=float)
        return cls(pts[:, 0], pts[:, 1])

    @property
    def is_constant(self):
        return self.x.size == 1 or bool(np.all(self.y == self.y[0]))

    def __call__(self, t):
        if self.x.size == 1:
            return np.full(np.shape(t), self.y[0]) if np.ndim(t) else float(self.y[0])
        return np.interp(t, self.x, self.y)

    def __repr__(self):
        if self.x.size == 1:
            return f"Table.constant({self.y[0]!r})"
        return f"Table({self.x.tolist()!r}, {self.y.tolist()!r})"


class Material:
    """Thermal properties of one region.

    Parameters
    ----------
    rho : float
        Density, kg/m^3 (constant).
    c, k : float, Table or sequence of (T, value) pairs
        Specific heat (J/kg K) and conductivity (W/m K) as functions of T.
    latent_heat : float
        J/kg, released linearly between ``solidus`` and ``liquidus``.
    T0 : float
        Initial (pouring) temperature.
    t_range : (float, float), optional
        Temperature range covered by the enthalpy curve. Defaults to the
        span of all breakpoints; required when every property is constant.
        The enthalpy reference ``H = 0`` sits at the low end.
    """

    def __init__(self, rho, c, k, latent_heat=0.0, solidus=None, liquidus=None,
                 T0=None, t_range=None, name=None):
        self.rho = float(rho)
        self.c = Table.coerce(c)
        self.k = Table.coerce(k)
        self.latent_heat = float(latent_heat)
        self.solidus = None if solidus is None else float(solidus)
        self.liquidus = None if liquidus is None else float(liquidus)
        self.T0 = None if T0 is None else float(T0)
        self.name = name
        self.clamp_count = 0
        if self.rho <= 0:
            raise ConfigurationError("density must be positive")
        if np.any(self.c.y <= 0) or np.any(self.k.y <= 0):
            raise ConfigurationError("specific heat and conductivity must be positive")
        if self.latent_heat < 0:
            raise ConfigurationError("latent heat must be non-negative")
        if self.latent_heat > 0:
            if self.solidus is None or self.liquidus is None:
                raise ConfigurationError("latent heat needs solidus and liquidus")
            if not self.liquidus > self.solidus:
                raise ConfigurationError("liquidus must lie above solidus")

        pts = list(self.c.x) + list(self.k.x)
        if self.latent_heat > 0:
            pts += [self.solidus, self.liquidus]
        if t_range is None:
            lo, hi = min(pts), max(pts)
            if not hi > lo:
                raise ConfigurationError(
                    "t_range is required when the tables do not span a temperature range")
        else:
            lo, hi = map(float, t_range)
            if not hi > lo:
                raise ConfigurationError("t_range must be increasing")
        self.t_min, self.t_max = lo, hi
        self._build_curve()

    def _build_curve(self):
        lo, hi = self.t_min, self.t_max
        xs = [lo, hi] + [x for x in self.c.x if lo < x < hi]
        if self.latent_heat > 0:
            xs += [x for x in (self.solidus, self.liquidus) if lo < x < hi]
        xs = np.unique(np.asarray(xs, dtype=float))
        cx = self.c(xs)
        lat = np.zeros(xs.size - 1)
        if self.latent_heat > 0:
            mid = 0.5 * (xs[1:] + xs[:-1])
            inside = (mid > self.solidus) & (mid < self.liquidus)
            lat[inside] = self.latent_heat / (self.liquidus - self.solidus)
        dx = np.diff(xs)
        seg = 0.5 * (cx[1:] + cx[:-1]) * dx + lat * dx
        self._xs = xs
        self._cx = cx
        self._lat = lat
        self._H = np.concatenate([[0.0], np.cumsum(seg)])

    def enthalpy(self, T):
        """H(T) in J/kg, exact integral of ``c`` plus the latent contribution."""
        T = np.asarray(T, dtype=float)
        out_of_range = (T < self.t_min) | (T > self.t_max)
        if out_of_range.any():
            self.clamp_count += int(np.count_nonzero(out_of_range))
            T = np.clip(T, self.t_min, self.t_max)
        xs = self._xs
        i = np.clip(np.searchsorted(xs, T, side="right") - 1, 0, xs.size - 2)
        d = T - xs[i]
        dx = xs[i + 1] - xs[i]
        c0 = self._cx[i]
        slope = (self._cx[i + 1] - c0) / dx
        return self._H[i] + (c0 + self._lat[i]) * d + 0.5 * slope * d * d

    def dhdt(self, T):
        """Slope of the enthalpy curve (sensible plus latent)."""
        T = np.asarray(T, dtype=float)
        out = np.asarray(self.c(T), dtype=float)
        if self.latent_heat > 0:
            mushy = (T >= self.solidus) & (T <= self.liquidus)
            out = out + np.where(mushy, self.latent_heat / (self.liquidus - self.solidus), 0.0)
        return out

    def __repr__(self):
        return (f"Material(rho={self.rho}, c={self.c!r}, k={self.k!r}, "
                f"latent_heat={self.latent_heat}, solidus={self.solidus}, "
                f"liquidus={self.liquidus}, T0={self.T0})")


# ---------------------------------------------------------------------------
# Boundary conditions


@dataclass
class FixedTemperature:
    """``T = f(x, t)`` on the tagged facets' nodes.

    ``value`` is a number, a :class:`Table` over time, or a callable
    ``f(points, t) -> array``.
    """

    value: object

    def __call__(self, points, t):
        if callable(self.value) and not isinstance(self.value, Table):
            return np.broadcast_to(np.asarray(self.value(points, t), dtype=float),
                                   (points.shape[0],))
        v = Table.coerce(self.value)(t)
        return np.full(points.shape[0], float(v))


@dataclass
class Convection:
    """Outward flux ``q + h (T - T_inf)``."""

    q: float = 0.0
    h: float = 0.0
    T_inf: float = 0.0


@dataclass
class InterfaceCondition:
    """Convective coupling across a contact, ``h_i (T - T_sister)``.

    ``h`` may be a constant or a :class:`Table` over ``variable``
    (``"time"`` or ``"temperature"``; the temperature used is the mean of
    the facet and ambient temperatures).
    """

    h: object = 0.0
    variable: str = "time"

    def __post_init__(self):
        self.h = Table.coerce(self.h)
        if self.variable not in ("time", "temperature"):
            raise ConfigurationError(f"unknown interface table variable {self.variable!r}")

    def coefficient(self, t, T_facet, T_amb):
        if self.h.is_constant:
            return np.full(np.shape(T_facet), float(self.h.y[0]))
        if self.variable == "time":
            return np.full(np.shape(T_facet), float(self.h(t)))
        return self.h(0.5 * (T_facet + T_amb))


@dataclass
class Adiabatic:
    pass


@dataclass
class SolverConfig:
    theta: float = 0.0
    safety: float = 0.5
    t_end: float = 1.0
    output_every: int = 0
    length_scale: str = "altitude"

    def __post_init__(self):
        if self.theta != 0.0:
            raise ConfigurationError("only the explicit scheme (theta = 0) is implemented")
        if not 0.0 < self.safety <= 1.0:
            raise ConfigurationError("safety factor must lie in (0, 1]")
        if self.length_scale not in ("altitude", "edge"):
            raise ConfigurationError(f"unknown length scale {self.length_scale!r}")


@dataclass
class SolverState:
    T: np.ndarray
    H: np.ndarray
    t: float = 0.0
    dt: float = 0.0
    step: int = 0

    def copy(self):
        return SolverState(self.T.copy(), self.H.copy(), self.t, self.dt, self.step)


@dataclass(eq=False)
class Problem:
    """Mesh, materials, boundary conditions and solver settings."""

    mesh: Mesh
    materials: dict
    conditions: dict
    config: SolverConfig = field(default_factory=SolverConfig)
    pairing: SisterPairing = None

    def __post_init__(self):
        mesh = self.mesh
        for r in mesh.region_ids:
            if int(r) not in self.materials:
                raise ConfigurationError(f"region {int(r)} has no material")
        contact_tags = {t for pair in mesh.contacts for t in pair}
        for tag in mesh.tags():
            bc = self.conditions.get(tag)
            if bc is None:
                raise ConfigurationError(f"facet tag {tag!r} has no boundary condition")
            if isinstance(bc, InterfaceCondition) != (tag in contact_tags):
                raise ConfigurationError(
                    f"tag {tag!r}: interface conditions go with contact declarations")
        if self.pairing is None:
            self.pairing = pair_sister_facets(mesh)
        self._node_region = mesh.node_region()

    @property
    def node_region(self):
        return self._node_region

    def region_nodes(self):
        return [(self.materials[int(r)], np.flatnonzero(self._node_region == r))
                for r in self.mesh.region_ids]

    def fixed_nodes(self):
        """``[(condition, node_ids)]`` for fixed-temperature tags, sorted by tag."""
        out = []
        for tag in self.mesh.tags():
            bc = self.conditions[tag]
            if isinstance(bc, FixedTemperature):
                nodes = np.unique(self.mesh.facets[self.mesh.facets_with_tag(tag)])
                out.append((bc, nodes))
        return out

    def interface_condition(self, i):
        """Condition governing pairing entry ``i``."""
        tag = self.mesh.facet_tags[self.pairing.facet[i]]
        return self.conditions[tag]


def initial_state(problem: Problem) -> SolverState:
    T = np.empty(problem.mesh.n_nodes)
    for mat, nodes in problem.region_nodes():
        if mat.T0 is None:
            raise ConfigurationError("every material needs an initial temperature T0")
        T[nodes] = mat.T0
    apply_fixed(problem, T, 0.0)
    return SolverState(T, nodal_enthalpy_field(problem, T))


def nodal_enthalpy(material: Material, T):
    return material.enthalpy(T)


def nodal_enthalpy_field(problem, T, out=None):
    H = np.empty_like(T) if out is None else out
    for mat, nodes in problem.region_nodes():
        H[nodes] = mat.enthalpy(T[nodes])
    return H


def apply_fixed(problem, T, t, node_index=None):
    """Overwrite fixed-temperature nodes with ``f(x, t)``.

    ``node_index`` maps global node ids to positions in ``T`` (``-1`` for
    nodes the caller does not hold); when omitted ``T`` is global.
    """
    for bc, nodes in problem.fixed_nodes():
        if node_index is not None:
            loc = node_index[nodes]
            keep = loc >= 0
            nodes, loc = nodes[keep], loc[keep]
        else:
            loc = nodes
        if nodes.size:
            T[loc] = bc(problem.mesh.nodes[nodes], t)
    return T


# ---------------------------------------------------------------------------
# Element kernels


def apparent_heat_capacity(Te, He, grads, material=None, lengths=None):
    """Lemmon estimate ``sqrt(|grad H|^2 / |grad T|^2)`` per element.

    Parameters
    ----------
    Te, He : ndarray, shape (ne, 4)
        Nodal temperatures and enthalpies of each element.
    grads : ndarray, shape (ne, 4, 3)
        Shape-function gradients.
    material : Material, optional
        Supplies the fallback slope when the nodal temperatures are all
        (numerically) equal. Required if that can happen.
    lengths : ndarray, shape (ne,), optional
        Element size used to normalise ``|grad T|^2``; defaults to
        ``1 / max |grad N|``.

    Where ``|grad T|`` vanishes relative to the nodal spread, the secant
    ``(H_max - H_min) / (T_max - T_min)`` is used instead, and where the
    spread itself vanishes, the enthalpy curve's slope at the element
    mean temperature.
    """
    Te = np.atleast_2d(Te)
    He = np.atleast_2d(He)
    grads = np.asarray(grads).reshape(-1, 4, 3)
    gT = np.einsum("eaj,ea->ej", grads, Te)
    gH = np.einsum("eaj,ea->ej", grads, He)
    g2 = np.einsum("ej,ej->e", gT, gT)
    h2 = np.einsum("ej,ej->e", gH, gH)
    tmax = Te.max(axis=1)
    tmin = Te.min(axis=1)
    spread = tmax - tmin
    tbar = Te.mean(axis=1)
    if lengths is None:
        lengths = 1.0 / np.sqrt(np.einsum("eaj,eaj->ea", grads, grads).max(axis=1))
    flat = spread <= RANGE_EPS * np.maximum(1.0, np.abs(tbar))
    thin = ~flat & (g2 < GRAD_EPS * (spread / lengths) ** 2)
    ok = ~(flat | thin)
    out = np.empty(Te.shape[0])
    out[ok] = np.sqrt(h2[ok] / g2[ok])
    if thin.any():
        out[thin] = (He[thin].max(axis=1) - He[thin].min(axis=1)) / spread[thin]
    if flat.any():
        if material is None:
            raise SolverError("flat element temperature needs a material for the fallback")
        out[flat] = material.dhdt(tbar[flat])
    return out


def interface_ambient(Tsister):
    """Mean of each sister element's four nodal temperatures."""
    Ts = np.atleast_2d(Tsister)
    return (Ts[:, 0] + Ts[:, 1] + Ts[:, 2] + Ts[:, 3]) * 0.25


def explicit_update(T, C, r, dt, out=None):
    """``T + dt * r / C`` node by node."""
    C = np.asarray(C)
    if np.any(C <= 0.0):
        bad = int(np.flatnonzero(C <= 0.0)[0])
        raise SolverError(f"non-positive lumped capacitance at local node {bad}")
    if out is None:
        return T + dt * (r / C)
    np.divide(r, C, out=out)
    out *= dt
    out += T
    return out


@dataclass(eq=False)
class ElementBlock:
    """Geometry and boundary data of an element subset, in local numbering.

    ``gather`` maps block-local nodes to positions in the caller's nodal
    arrays; ``conn`` indexes block-local nodes. Interface facets read their
    ambient temperature from an external array through ``iamb``.
    """

    elements: np.ndarray
    gather: np.ndarray
    conn: np.ndarray
    vol: np.ndarray
    grads: np.ndarray
    size: np.ndarray
    inv_len2: np.ndarray
    min_edge: np.ndarray
    rho: np.ndarray
    groups: list
    fconn: np.ndarray
    farea: np.ndarray
    fq: np.ndarray
    fh: np.ndarray
    finf: np.ndarray
    fowner: np.ndarray
    iconn: np.ndarray
    iarea: np.ndarray
    iamb: np.ndarray
    icond: list
    iowner: np.ndarray

    @property
    def n_nodes(self):
        return self.gather.size

    @property
    def n_elements(self):
        return self.elements.size

    def nbytes(self):
        """Bytes of resident per-step state: nodal T, H, C, r plus the
        element and facet caches."""
        arrays = (self.conn, self.vol, self.grads, self.size, self.inv_len2,
                  self.rho, self.fconn, self.farea, self.fq, self.fh, self.finf,
                  self.iconn, self.iarea, self.iamb)
        return 4 * 8 * self.n_nodes + sum(a.nbytes for a in arrays)


def make_block(problem: Problem, elements, node_index, iface_index=None,
               geometry=None):
    """Build an :class:`ElementBlock` for ``elements`` (global ids).

    ``node_index`` maps global node ids to the caller's nodal positions.
    ``iface_index`` maps pairing entries to positions of the caller's
    ambient array (defaults to the pairing index itself).
    ``geometry`` may hold precomputed ``(vol, grads, min_edge)`` for all
    mesh elements.
    """
    mesh = problem.mesh
    elements = np.asarray(elements, dtype=np.int64)
    tets = mesh.tets[elements]
    gnodes, conn = np.unique(tets, return_inverse=True)
    conn = conn.reshape(-1, 4)
    gather = node_index[gnodes]
    if np.any(gather < 0):
        raise SolverError("block references nodes its owner does not hold")
    if geometry is None:
        X = mesh.nodes[tets]
        vol, grads = tet_geometry_batch(X)
        min_edge = shortest_edge(X)
    else:
        vol, grads, min_edge = (a[elements] for a in geometry)
    inv_len2 = 4.0 * np.einsum("eaj,eaj->ea", grads, grads).max(axis=1)
    size = 1.0 / np.sqrt(inv_len2 / 4.0)

    regions = mesh.regions[elements]
    rho = np.empty(elements.size)
    groups = []
    for r in np.unique(regions):
        idx = np.flatnonzero(regions == r)
        mat = problem.materials[int(r)]
        rho[idx] = mat.rho
        groups.append((mat, idx))

    local_of_elem = {int(e): i for i, e in enumerate(elements)}
    owner = mesh.facet_owner
    in_block = np.isin(owner, elements)
    local_node = {int(g): i for i, g in enumerate(gnodes)}

    def localize(fnodes):
        return np.array([[local_node[int(n)] for n in row] for row in fnodes],
                        dtype=np.int64).reshape(-1, 3)

    # convective facets
    fidx = [f for f in np.flatnonzero(in_block)
            if isinstance(problem.conditions[mesh.facet_tags[f]], Convection)]
    fidx = np.asarray(fidx, dtype=np.int64)
    fconn = localize(mesh.facets[fidx])
    farea = triangle_area(mesh.nodes[mesh.facets[fidx]]) if fidx.size else np.zeros(0)
    bcs = [problem.conditions[mesh.facet_tags[f]] for f in fidx]
    fq = np.array([bc.q for bc in bcs], dtype=float)
    fh = np.array([bc.h for bc in bcs], dtype=float)
    finf = np.array([bc.T_inf for bc in bcs], dtype=float)
    fowner = np.array([local_of_elem[int(owner[f])] for f in fidx], dtype=np.int64)

    # interface facets
    pairing = problem.pairing
    pidx = np.flatnonzero(np.isin(owner[pairing.facet], elements)) if len(pairing) else \
        np.zeros(0, dtype=np.int64)
    pf = pairing.facet[pidx]
    iconn = localize(mesh.facets[pf])
    iarea = triangle_area(mesh.nodes[mesh.facets[pf]]) if pf.size else np.zeros(0)
    iamb = pidx if iface_index is None else iface_index[pidx]
    icond = _group_conditions([problem.interface_condition(i) for i in pidx])
    iowner = np.array([local_of_elem[int(owner[f])] for f in pf], dtype=np.int64)

    return ElementBlock(elements, gather, conn, vol, grads, size, inv_len2, min_edge,
                        rho, groups, fconn, farea, fq, fh, finf, fowner,
                        iconn, iarea, np.asarray(iamb, dtype=np.int64), icond, iowner)


def _group_conditions(conds):
    groups = {}
    for i, bc in enumerate(conds):
        groups.setdefault(id(bc), (bc, []))[1].append(i)
    return [(bc, np.asarray(idx, dtype=np.int64)) for bc, idx in groups.values()]


def _interface_h(block, t, Tf, Tamb):
    h = np.empty(block.iconn.shape[0])
    for bc, idx in block.icond:
        h[idx] = bc.coefficient(t, Tf[idx], Tamb[idx])
    return h


def assemble_local(block: ElementBlock, T, H, ambient=None, t=0.0):
    """Lumped capacitance and residual ``F - K T`` on the block's nodes.

    Parameters
    ----------
    block : ElementBlock
    T, H : ndarray
        Block-local nodal temperature and enthalpy.
    ambient : ndarray, optional
        Sister-element mean temperatures, indexed by ``block.iamb``.
    t : float
        Current time, for time-dependent coefficients.

    Returns
    -------
    C, r : ndarray
        Per block-local node, in J/K and W.
    """
    conn = block.conn
    Te = T[conn]
    He = H[conn]
    n = block.n_nodes
    capp = np.empty(conn.shape[0])
    kk = np.empty(conn.shape[0])
    tbar = Te.mean(axis=1)
    for mat, idx in block.groups:
        capp[idx] = apparent_heat_capacity(Te[idx], He[idx], block.grads[idx], mat,
                                           block.size[idx])
        kk[idx] = mat.k(tbar[idx])
    cap = block.rho * capp * block.vol * 0.25
    flat = conn.ravel()
    C = np.bincount(flat, weights=np.repeat(cap, 4), minlength=n)

    gT = np.einsum("eaj,ea->ej", block.grads, Te)
    gT *= (kk * block.vol)[:, None]
    re = np.einsum("eaj,ej->ea", block.grads, gT)
    r = -np.bincount(flat, weights=re.ravel(), minlength=n)

    if block.fconn.shape[0]:
        Tf = T[block.fconn]
        w = (-block.fq[:, None] + block.fh[:, None] * (block.finf[:, None] - Tf))
        w *= (block.farea / 3.0)[:, None]
        r += np.bincount(block.fconn.ravel(), weights=w.ravel(), minlength=n)
    if block.iconn.shape[0]:
        if ambient is None:
            raise SolverError("interface facets need ambient temperatures")
        Tamb = ambient[block.iamb]
        Tf = T[block.iconn]
        h = _interface_h(block, t, Tf.mean(axis=1), Tamb)
        w = h[:, None] * (Tamb[:, None] - Tf) * (block.iarea / 3.0)[:, None]
        r += np.bincount(block.iconn.ravel(), weights=w.ravel(), minlength=n)
    return C, r


def block_timestep_bound(block: ElementBlock, T, ambient=None, t=0.0,
                         length_scale="altitude"):
    """Smallest element bound ``rho c l^2 / k`` over the block (no safety).

    With ``length_scale="altitude"``, ``l`` is half the smallest element
    altitude, and convective facets tighten the bound of their owner; this
    keeps the lumped update monotone on non-obtuse meshes for any safety
    factor up to 1. ``"edge"`` uses the shortest edge.
    """
    if block.n_elements == 0:
        return np.inf
    Te = T[block.conn]
    tbar = Te.mean(axis=1)
    cc = np.empty(block.n_elements)
    kk = np.empty(block.n_elements)
    for mat, idx in block.groups:
        cc[idx] = mat.c(tbar[idx])
        kk[idx] = mat.k(tbar[idx])
    if length_scale == "edge":
        dt = block.rho * cc * block.min_edge**2 / kk
        return float(dt.min())
    denom = kk * block.vol * block.inv_len2 / 4.0
    conv = np.zeros(block.n_elements)
    if block.fconn.shape[0]:
        np.add.at(conv, block.fowner, block.fh * block.farea / 3.0)
    if block.iconn.shape[0] and ambient is not None:
        Tf = T[block.iconn].mean(axis=1)
        h = _interface_h(block, t, Tf, ambient[block.iamb])
        np.add.at(conv, block.iowner, h * block.iarea / 3.0)
    dt = block.rho * cc * block.vol * 0.25 / (denom + conv)
    return float(dt.min())


# ---------------------------------------------------------------------------
# Global (unblocked) sweep


class GlobalAssembly:
    """Traditional element-by-element sweep over the whole mesh."""

    def __init__(self, problem: Problem, geometry=None):
        self.problem = problem
        mesh = problem.mesh
        self.block = make_block(problem, np.arange(mesh.n_elements),
                                np.arange(mesh.n_nodes), geometry=geometry)
        self.sister_nodes = mesh.tets[problem.pairing.sister]
        self.fixed = problem.fixed_nodes()

    def ambient(self, T):
        return interface_ambient(T[self.sister_nodes])

    def timestep(self, state):
        cfg = self.problem.config
        amb = self.ambient(state.T)
        return cfg.safety * block_timestep_bound(self.block, state.T, amb, state.t,
                                                 cfg.length_scale)

    def step(self, state, dt=None):
        if dt is None:
            dt = self.timestep(state)
        amb = self.ambient(state.T)
        C, r = assemble_local(self.block, state.T, state.H, amb, state.t)
        return advance(self.problem, state, C, r, dt)


def advance(problem, state, C, r, dt):
    T = explicit_update(state.T, C, r, dt)
    t = state.t + dt
    apply_fixed(problem, T, t)
    H = nodal_enthalpy_field(problem, T)
    return SolverState(T, H, t, dt, state.step + 1)


def stable_timestep(problem: Problem, T=None, safety=None, length_scale=None):
    """Global explicit step size from the element bounds."""
    cfg = problem.config
    safety = cfg.safety if safety is None else safety
    if not 0.0 < safety <= 1.0:
        raise ConfigurationError("safety factor must lie in (0, 1]")
    length_scale = cfg.length_scale if length_scale is None else length_scale
    if T is None:
        T = initial_state(problem).T
    asm = GlobalAssembly(problem)
    dt = safety * block_timestep_bound(asm.block, T, asm.ambient(T), 0.0, length_scale)
    if not (np.isfinite(dt) and dt > 0):
        raise SolverError(f"non-positive stable time step {dt}")
    return dt


def mesh_geometry(mesh: Mesh):
    """``(vol, grads, min_edge)`` for all elements, computed once."""
    X = mesh.nodes[mesh.tets]
    vol, grads = tet_geometry_batch(X)
    return vol, grads, shortest_edge(X)
