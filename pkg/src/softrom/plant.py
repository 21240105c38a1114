"""High-dimensional nonlinear truss plant.

The plant is a geometrically nonlinear elastic truss in second-order form

    M qdd = P - F(q, v) + H(q) u,

with a diagonal (lumped) mass matrix ``M``, constant external force ``P``
(gravity), internal forces ``F`` from large-displacement springs with a
linear material law plus Rayleigh damping, and a cable input matrix ``H``
whose columns are unit vectors from each attachment node toward its anchor.
Measurements ``y`` and performance outputs ``z`` are linear in the combined
state ``x = [v; q]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DegenerateGeometryError,
    DimensionError,
    DivergenceError,
    EquilibriumError,
    IntegrationError,
)

_I3 = np.eye(3)
_MIN_EDGE_LENGTH = 1e-12


@dataclass
class MeshTopology:
    """Truss connectivity: nodes, springs, Dirichlet set, lumped masses.

    Attributes
    ----------
    node_count : int
        Number of nodes N; the position vector has length 3N.
    rest_positions : (3N,) ndarray
        Stress-free node coordinates, flattened xyz per node (m).
    edges : (E, 2) int ndarray
        Node index pairs of the springs.
    rest_lengths : (E,) ndarray
        Spring rest lengths (m), all positive.
    stiffnesses : (E,) ndarray
        Spring stiffnesses (N/m), all positive.
    fixed_nodes : (n_fix,) int ndarray
        Nodes pinned to their rest position (zero velocity), nonempty.
    lumped_masses : (N,) ndarray
        Per-node mass (kg).
    """

    node_count: int
    rest_positions: np.ndarray
    edges: np.ndarray
    rest_lengths: np.ndarray
    stiffnesses: np.ndarray
    fixed_nodes: np.ndarray
    lumped_masses: np.ndarray

    def __post_init__(self):
        self.rest_positions = np.asarray(self.rest_positions, dtype=float).ravel()
        self.edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        self.rest_lengths = np.asarray(self.rest_lengths, dtype=float).ravel()
        self.stiffnesses = np.asarray(self.stiffnesses, dtype=float).ravel()
        self.fixed_nodes = np.unique(np.asarray(self.fixed_nodes, dtype=int))
        self.lumped_masses = np.asarray(self.lumped_masses, dtype=float).ravel()
        n = self.node_count
        if self.rest_positions.size != 3 * n:
            raise DimensionError("rest_positions must have length 3*node_count")
        if self.lumped_masses.size != n or np.any(self.lumped_masses <= 0):
            raise DimensionError("lumped_masses must be positive, one per node")
        e = self.edges
        if e.size and (e.min() < 0 or e.max() >= n):
            raise DimensionError("edge references an invalid node index")
        if np.any(e[:, 0] == e[:, 1]):
            raise DimensionError("edge endpoints must be distinct")
        if np.any(self.rest_lengths <= 0) or np.any(self.stiffnesses <= 0):
            raise DimensionError("rest lengths and stiffnesses must be positive")
        if self.fixed_nodes.size == 0:
            raise DimensionError("fixed_nodes must be nonempty (base attachment)")
        if self.fixed_nodes.min() < 0 or self.fixed_nodes.max() >= n:
            raise DimensionError("fixed node index out of range")
        self._check_anchored()

    def _check_anchored(self):
        """Every free node must reach a fixed node through the edge graph."""
        n = self.node_count
        adj = [[] for _ in range(n)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        seen = np.zeros(n, dtype=bool)
        stack = list(self.fixed_nodes)
        seen[self.fixed_nodes] = True
        while stack:
            i = stack.pop()
            for j in adj[i]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
        if not seen.all():
            raise DimensionError("free-floating component: some nodes do not reach a fixed node")

    @property
    def ndof(self) -> int:
        return 3 * self.node_count


@dataclass
class FullState:
    """Plant state: node positions q (3N,) and velocities v (3N,)."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.v = np.asarray(self.v, dtype=float).ravel()
        if self.q.shape != self.v.shape:
            raise DimensionError("q and v must have equal length")

    def copy(self) -> "FullState":
        return FullState(self.q.copy(), self.v.copy())


@dataclass
class CableSpec:
    """Cable actuation: tension toward fixed external anchor points.

    ``attachment_nodes[j]`` is pulled toward ``anchors[j]`` with force
    ``u[j]`` (N); the input matrix column is the current unit direction.
    """

    attachment_nodes: np.ndarray
    anchors: np.ndarray

    def __post_init__(self):
        self.attachment_nodes = np.asarray(self.attachment_nodes, dtype=int).ravel()
        self.anchors = np.asarray(self.anchors, dtype=float).reshape(-1, 3)
        if self.anchors.shape[0] != self.attachment_nodes.size:
            raise DimensionError("one anchor point per attachment node")

    @property
    def m(self) -> int:
        return self.attachment_nodes.size


@dataclass
class PlantParams:
    """Physical and simulation parameters of the plant."""

    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    rayleigh_alpha: float = 0.5
    rayleigh_beta: float = 0.01
    dt_plant: float = 1e-3
    measurement_noise_std: np.ndarray | float = 0.0

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).ravel()
        if self.gravity.size != 3:
            raise DimensionError("gravity must be a 3-vector")
        if self.dt_plant <= 0:
            raise DimensionError("dt_plant must be positive")
        if self.rayleigh_alpha < 0 or self.rayleigh_beta < 0:
            raise DimensionError("Rayleigh coefficients must be nonnegative")


@dataclass
class OutputMaps:
    """Linear measurement and performance maps acting on x = [v; q]."""

    C_y: np.ndarray
    C_z: np.ndarray

    def __post_init__(self):
        self.C_y = np.atleast_2d(np.asarray(self.C_y, dtype=float))
        self.C_z = np.atleast_2d(np.asarray(self.C_z, dtype=float))
        if not (np.isfinite(self.C_y).all() and np.isfinite(self.C_z).all()):
            raise DimensionError("output map rows must be finite")


def selection_output_maps(node_count: int, measured_nodes, performance_nodes) -> OutputMaps:
    """Build selection maps: y = velocities then positions of ``measured_nodes``,
    z = positions of ``performance_nodes``."""
    ndof = 3 * node_count
    measured_nodes = np.asarray(measured_nodes, dtype=int)
    performance_nodes = np.asarray(performance_nodes, dtype=int)

    def rows_for(nodes, section):
        # section 0 selects from v (first 3N entries of x), 1 from q
        r = np.zeros((3 * nodes.size, 2 * ndof))
        for k, nd in enumerate(nodes):
            for ax in range(3):
                r[3 * k + ax, section * ndof + 3 * nd + ax] = 1.0
        return r

    C_y = np.vstack([rows_for(measured_nodes, 0), rows_for(measured_nodes, 1)])
    C_z = rows_for(performance_nodes, 1)
    return OutputMaps(C_y=C_y, C_z=C_z)


def diamond_mesh(subdivisions: int = 8, pitch: float = 0.02,
                 level_aspect: float = 0.75, stiffness: float = 300.0,
                 total_mass: float = 0.3, edge_cutoff: float = 1.6):
    """Generate the default diamond-profile truss lattice.

    Square grids are stacked level by level, ramping from a 2x2 base up to
    ``subdivisions``^2 at the equator and back down to 2x2, capped by a
    single apex node (the end effector). The base level is fixed. Nodes are
    ordered level-major, which keeps the assembled stiffness matrix banded.

    Returns
    -------
    topo : MeshTopology
    landmarks : dict
        ``end_effector`` (apex node index) and ``elbows`` (the four equator
        corner nodes, in +x+y, -x+y, -x-y, +x-y order).
    """
    if subdivisions < 3:
        raise DimensionError("subdivisions must be >= 3")
    sizes = list(range(2, subdivisions + 1)) + list(range(subdivisions - 1, 1, -1))
    pz = level_aspect * pitch
    positions = []
    level_of = []
    for lvl, size in enumerate(sizes):
        z = lvl * pz
        off = (size - 1) / 2.0
        for i in range(size):
            for j in range(size):
                positions.append(((i - off) * pitch, (j - off) * pitch, z))
                level_of.append(lvl)
    apex = (0.0, 0.0, len(sizes) * pz)
    positions.append(apex)
    level_of.append(len(sizes))
    pos = np.array(positions)
    n = len(pos)
    level_of = np.array(level_of)

    cutoff = edge_cutoff * pitch
    edges = []
    for lvl in range(level_of.max() + 1):
        cur = np.flatnonzero(level_of == lvl)
        nxt = np.flatnonzero(level_of == lvl + 1)
        for ii, a in enumerate(cur):
            for b in cur[ii + 1:]:
                if np.linalg.norm(pos[a] - pos[b]) <= cutoff:
                    edges.append((a, b))
            for b in nxt:
                if np.linalg.norm(pos[a] - pos[b]) <= cutoff:
                    edges.append((a, b))
    edges = np.array(edges)
    rest_lengths = np.linalg.norm(pos[edges[:, 0]] - pos[edges[:, 1]], axis=1)

    fixed = np.flatnonzero(level_of == 0)
    topo = MeshTopology(
        node_count=n,
        rest_positions=pos.ravel(),
        edges=edges,
        rest_lengths=rest_lengths,
        stiffnesses=np.full(len(edges), float(stiffness)),
        fixed_nodes=fixed,
        lumped_masses=np.full(n, total_mass / n),
    )

    eq_lvl = subdivisions - 2
    eq_nodes = np.flatnonzero(level_of == eq_lvl)
    eq_xy = pos[eq_nodes, :2]
    elbows = [eq_nodes[np.argmax(eq_xy @ np.array(d))]
              for d in ((1, 1), (-1, 1), (-1, -1), (1, -1))]
    landmarks = {"end_effector": n - 1, "elbows": np.array(elbows)}
    return topo, landmarks


class Plant:
    """Simulator for the truss plant: forces, Jacobians, stepping, outputs.

    All position/velocity vectors are full length-3N arrays; fixed-node
    entries are pinned (rest position, zero velocity) and the corresponding
    rows of forces and Jacobians are zeroed.
    """

    def __init__(self, topo: MeshTopology, cables: CableSpec,
                 params: PlantParams, maps: OutputMaps):
        self.topo = topo
        self.cables = cables
        self.params = params
        self.maps = maps
        n = topo.node_count
        self.ndof = 3 * n
        if maps.C_y.shape[1] != 2 * self.ndof or maps.C_z.shape[1] != 2 * self.ndof:
            raise DimensionError("output maps must act on the length-6N combined state")
        free_nodes = np.setdiff1d(np.arange(n), topo.fixed_nodes)
        if np.intersect1d(cables.attachment_nodes, topo.fixed_nodes).size:
            raise DimensionError("cable attachment nodes must be free nodes")
        rest3 = topo.rest_positions.reshape(-1, 3)
        gap = np.linalg.norm(cables.anchors - rest3[cables.attachment_nodes], axis=1)
        if np.any(gap < _MIN_EDGE_LENGTH):
            raise DegenerateGeometryError("cable anchor coincides with attachment rest position")

        fixed_dofs = (3 * topo.fixed_nodes[:, None] + np.arange(3)).ravel()
        self.free_dofs = np.setdiff1d(np.arange(self.ndof), fixed_dofs)
        self.nfree = self.free_dofs.size
        dof_map = -np.ones(self.ndof, dtype=int)
        dof_map[self.free_dofs] = np.arange(self.nfree)

        self._ea = topo.edges[:, 0]
        self._eb = topo.edges[:, 1]
        self._ia = 3 * self._ea[:, None] + np.arange(3)   # (E,3) dof indices
        self._ib = 3 * self._eb[:, None] + np.arange(3)

        # COO pattern for the four 3x3 blocks of every edge, restricted to
        # free dofs and pre-deduplicated into a fixed CSR structure.
        def _rows(idx):
            return np.repeat(idx, 3, axis=1).ravel()

        def _cols(idx):
            return np.tile(idx, (1, 3)).ravel()

        rows = np.concatenate([_rows(self._ia), _rows(self._ia), _rows(self._ib), _rows(self._ib)])
        cols = np.concatenate([_cols(self._ia), _cols(self._ib), _cols(self._ia), _cols(self._ib)])
        self._coo_rows_full = rows
        self._coo_cols_full = cols
        rmap = dof_map[rows]
        cmap = dof_map[cols]
        self._kept = (rmap >= 0) & (cmap >= 0)
        keys = rmap[self._kept].astype(np.int64) * self.nfree + cmap[self._kept]
        uniq, inv = np.unique(keys, return_inverse=True)
        self._slot_of = inv
        self._nnz = uniq.size
        self._csr_indices = (uniq % self.nfree).astype(np.int32)
        self._csr_indptr = np.searchsorted(uniq // self.nfree, np.arange(self.nfree + 1)).astype(np.int32)
        diag_keys = np.arange(self.nfree, dtype=np.int64) * self.nfree + np.arange(self.nfree)
        self._diag_slots = np.searchsorted(uniq, diag_keys)
        if np.any(uniq[self._diag_slots] != diag_keys):
            raise DimensionError("mesh leaves a free dof without stiffness coupling")
        # slots of the (c,c) diagonal blocks used by the cable force Jacobian
        self._cable_slots = []
        for c in cables.attachment_nodes:
            dofs = dof_map[3 * c + np.arange(3)]
            k3 = dofs[:, None].astype(np.int64) * self.nfree + dofs[None, :]
            s = np.searchsorted(uniq, k3.ravel())
            if np.any(uniq[s] != k3.ravel()):
                raise DimensionError("cable attachment block missing from stiffness pattern")
            self._cable_slots.append(s)

        self._mass = np.repeat(topo.lumped_masses, 3)       # (3N,) diagonal of M
        self._mass_free = self._mass[self.free_dofs]
        P = np.repeat(topo.lumped_masses, 3) * np.tile(params.gravity, n)
        P[fixed_dofs] = 0.0
        self._P = P

        std = params.measurement_noise_std
        p = maps.C_y.shape[0]
        self._noise_std = np.full(p, float(std)) if np.isscalar(std) else np.asarray(std, dtype=float)
        if self._noise_std.size != p:
            raise DimensionError("measurement_noise_std must be scalar or one per measurement row")

    # ------------------------------------------------------------------ #
    # geometry and force evaluation

    def rest_state(self) -> FullState:
        return FullState(self.topo.rest_positions.copy(), np.zeros(self.ndof))

    def _edge_geometry(self, q):
        d = q[self._ia] - q[self._ib]
        s = np.linalg.norm(d, axis=1)
        if s.min() < _MIN_EDGE_LENGTH:
            raise DegenerateGeometryError("edge endpoints coincide")
        return d, s, d / s[:, None]

    def elastic_energy(self, q) -> float:
        """Total spring strain energy at configuration q (J)."""
        _, s, _ = self._edge_geometry(q)
        return float(0.5 * np.sum(self.topo.stiffnesses * (s - self.topo.rest_lengths) ** 2))

    def _scatter_edge_forces(self, per_edge):
        """Accumulate (E,3) per-edge vectors with +/- signs at the endpoints."""
        f = np.bincount(self._ia.ravel(), weights=per_edge.ravel(), minlength=self.ndof)
        f -= np.bincount(self._ib.ravel(), weights=per_edge.ravel(), minlength=self.ndof)
        return f

    def internal_force(self, q, v) -> np.ndarray:
        """F(q, v) = grad of elastic energy plus Rayleigh damping forces.

        Fixed-node rows are zeroed. The sign convention follows
        M qdd = P - F + H u: a stretched spring yields positive F pointing
        outward along the edge so that -F restores.
        """
        k, L0 = self.topo.stiffnesses, self.topo.rest_lengths
        al, be = self.params.rayleigh_alpha, self.params.rayleigh_beta
        _, s, u = self._edge_geometry(q)
        fe = (k * (s - L0))[:, None] * u
        F = self._scatter_edge_forces(fe)
        if al != 0.0:
            F = F + al * self._mass * v
        if be != 0.0:
            w = v[self._ia] - v[self._ib]
            uw = np.einsum("ij,ij->i", u, w)
            dmp = (k * L0 / s * uw)[:, None] * u + (k * (1.0 - L0 / s))[:, None] * w
            F = F + be * self._scatter_edge_forces(dmp)
        F[np.setdiff1d(np.arange(self.ndof), self.free_dofs)] = 0.0
        return F

    def _edge_blocks(self, q, v=None):
        """Per-edge 3x3 stiffness blocks (energy Hessian) and, if v is given,
        the blocks of d(K(q) v)/dq needed for the exact force Jacobian."""
        k, L0 = self.topo.stiffnesses, self.topo.rest_lengths
        _, s, u = self._edge_geometry(q)
        uu = u[:, :, None] * u[:, None, :]
        ke = (k * L0 / s)[:, None, None] * uu + (k * (1.0 - L0 / s))[:, None, None] * _I3
        if v is None:
            return ke, None
        w = v[self._ia] - v[self._ib]
        uw = np.einsum("ij,ij->i", u, w)
        c = (k * L0 / s ** 2)[:, None, None]
        tb = c * (uw[:, None, None] * (_I3 - 3.0 * uu)
                  + u[:, :, None] * w[:, None, :] + w[:, :, None] * u[:, None, :])
        return ke, tb

    def _assemble_free(self, blocks) -> np.ndarray:
        """CSR value vector on the free-dof pattern from (E,3,3) blocks."""
        flat = np.concatenate([blocks, -blocks, -blocks, blocks]).ravel()[self._kept]
        return np.bincount(self._slot_of, weights=flat, minlength=self._nnz)

    def _csr_free(self, vals) -> sp.csr_matrix:
        return sp.csr_matrix((vals, self._csr_indices, self._csr_indptr),
                             shape=(self.nfree, self.nfree))

    def force_jacobians(self, q, v):
        """Analytic (dF/dq, dF/dv) as full-size sparse matrices.

        dF/dv = alpha*M + beta*K(q); dF/dq is the elastic Hessian plus the
        exact derivative of the beta*K(q)*v damping term, so both match
        central finite differences of internal_force at any state. Rows and
        columns of fixed dofs are zero.
        """
        al, be = self.params.rayleigh_alpha, self.params.rayleigh_beta
        ke, tb = self._edge_blocks(q, v)
        kq = ke if be == 0.0 else ke + be * tb
        flat_kq = np.concatenate([kq, -kq, -kq, kq]).ravel()[self._kept]
        flat_ke = np.concatenate([ke, -ke, -ke, ke]).ravel()[self._kept]
        rows = self._coo_rows_full[self._kept]
        cols = self._coo_cols_full[self._kept]
        dFdq = sp.coo_matrix((flat_kq, (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()
        dFdv = sp.coo_matrix((be * flat_ke, (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()
        if al != 0.0:
            md = np.zeros(self.ndof)
            md[self.free_dofs] = al * self._mass_free
            dFdv = dFdv + sp.diags(md)
        return dFdq, dFdv

    def input_matrix(self, q) -> np.ndarray:
        """H(q): column j is the unit vector from attachment node j toward
        its anchor, placed in that node's three rows."""
        H = np.zeros((self.ndof, self.cables.m))
        q3 = q.reshape(-1, 3)
        for j, c in enumerate(self.cables.attachment_nodes):
            d = self.cables.anchors[j] - q3[c]
            s = np.linalg.norm(d)
            if s < _MIN_EDGE_LENGTH:
                raise DegenerateGeometryError(f"cable {j} attachment coincides with anchor")
            H[3 * c:3 * c + 3, j] = d / s
        return H

    # ------------------------------------------------------------------ #
    # time stepping

    def step(self, state: FullState, u) -> FullState:
        """One semi-implicit (backward-Euler-in-velocity) step of dt_plant.

        Solves (M + dt*D + dt^2*K) dv = dt*(P - F + H u - dt*K*v) with the
        Jacobians frozen at the current state, then q+ = q + dt*v+.
        """
        u = np.asarray(u, dtype=float).ravel()
        if u.size != self.cables.m or not np.isfinite(u).all():
            raise DimensionError("control u must be finite with one entry per cable")
        dt = self.params.dt_plant
        al, be = self.params.rayleigh_alpha, self.params.rayleigh_beta
        q, v = state.q, state.v

        ke, tb = self._edge_blocks(q, v if be != 0.0 else None)
        ke_vals = self._assemble_free(ke)
        t_vals = self._assemble_free(tb) if tb is not None else 0.0
        kq_vals = ke_vals + be * t_vals    # dF/dq
        s_vals = (be * dt + dt * dt) * ke_vals + (be * dt * dt) * t_vals
        s_vals = s_vals.copy()
        s_vals[self._diag_slots] += (1.0 + al * dt) * self._mass_free
        S = self._csr_free(s_vals).tocsc()

        F = self.internal_force(q, v)
        rhs_full = self._P - F + self.input_matrix(q) @ u
        Kv = self._csr_free(kq_vals) @ v[self.free_dofs]
        rhs = dt * (rhs_full[self.free_dofs] - dt * Kv)
        try:
            dv = spla.splu(S).solve(rhs)
        except RuntimeError as exc:
            raise IntegrationError(f"implicit step linear solve failed: {exc}") from exc

        v_new = v.copy()
        v_new[self.free_dofs] += dv
        q_new = q + dt * v_new
        if not (np.isfinite(q_new).all() and np.isfinite(v_new).all()):
            raise DivergenceError("plant state became non-finite")
        return FullState(q_new, v_new)

    def step_n(self, state: FullState, u, n_sub: int) -> FullState:
        """Advance n_sub plant steps holding u constant."""
        for _ in range(n_sub):
            state = self.step(state, u)
        return state

    # ------------------------------------------------------------------ #
    # outputs

    def combined(self, state: FullState) -> np.ndarray:
        """x = [v; q], length 6N."""
        return np.concatenate([state.v, state.q])

    def measure(self, state: FullState, rng=None) -> np.ndarray:
        """y = C_y [v; q] + Gaussian noise (std per channel).

        ``rng`` may be a Generator, an int seed, or None for noiseless.
        """
        y = self.maps.C_y @ self.combined(state)
        if rng is None:
            return y
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        return y + self._noise_std * rng.standard_normal(y.size)

    def performance_output(self, state: FullState) -> np.ndarray:
        """z = C_z [v; q]."""
        return self.maps.C_z @ self.combined(state)

    # ------------------------------------------------------------------ #
    # static equilibrium

    def static_equilibrium(self, u=None, q_init=None, tol: float = 1e-9,
                           max_iter: int = 100) -> FullState:
        """Newton solve of P - F(q, 0) + H(q) u = 0 over the free dofs.

        Uses adaptive load continuation (ramping u) when a full-load Newton
        step stalls. Returns a zero-velocity state with residual inf-norm
        <= tol (N) or raises EquilibriumError after max_iter total Newton
        iterations.
        """
        m = self.cables.m
        u = np.zeros(m) if u is None else np.asarray(u, dtype=float).ravel()
        if u.size != m:
            raise DimensionError("control u must have one entry per cable")
        q = self.topo.rest_positions.copy() if q_init is None else np.asarray(q_init, dtype=float).copy()

        iters_left = max_iter
        lam, lam_done = 1.0, 0.0
        while True:
            lam_try = lam_done + lam * (1.0 - lam_done)
            q_new, ok, used = self._newton_equilibrium(q, lam_try, u, tol, iters_left)
            iters_left -= used
            if ok:
                lam_done = lam_try
                q = q_new
                if lam_done >= 1.0 - 1e-15:
                    return FullState(q, np.zeros(self.ndof))
                lam = min(1.0, 2.0 * lam)
            else:
                lam *= 0.5
                if lam < 1e-3:
                    raise EquilibriumError("load continuation collapsed below 1e-3 of the target load")
            if iters_left <= 0:
                raise EquilibriumError(f"no equilibrium within {max_iter} Newton iterations")

    def _newton_equilibrium(self, q_start, load_frac, u, tol, max_iter):
        """Newton with backtracking at a fixed load fraction. Returns
        (q, converged, iterations_used)."""
        u_eff = load_frac * u
        zero_v = np.zeros(self.ndof)
        q = q_start.copy()

        def residual(qq):
            r = self._P - self.internal_force(qq, zero_v) + self.input_matrix(qq) @ u_eff
            return r[self.free_dofs]

        r = residual(q)
        used = 0
        while used < max_iter:
            rn = np.abs(r).max()
            if rn <= tol:
                return q, True, used
            used += 1
            ke, _ = self._edge_blocks(q)
            vals = self._assemble_free(ke).copy()
            # add -d(Hu)/dq: block u_j (I - g g^T)/s at the attachment node
            q3 = q.reshape(-1, 3)
            for j, c in enumerate(self.cables.attachment_nodes):
                d = self.cables.anchors[j] - q3[c]
                s = np.linalg.norm(d)
                if s < _MIN_EDGE_LENGTH:
                    raise DegenerateGeometryError(f"cable {j} attachment coincides with anchor")
                g = d / s
                blk = u_eff[j] * (np.eye(3) - np.outer(g, g)) / s
                vals[self._cable_slots[j]] += blk.ravel()
            J = self._csr_free(vals).tocsc()
            try:
                delta = spla.splu(J).solve(r)
            except RuntimeError as exc:
                raise EquilibriumError(f"singular equilibrium Jacobian: {exc}") from exc
            step, accepted = 1.0, False
            while step > 1e-4:
                q_try = q.copy()
                q_try[self.free_dofs] += step * delta
                try:
                    r_try = residual(q_try)
                except DegenerateGeometryError:
                    step *= 0.5
                    continue
                if np.abs(r_try).max() < rn:
                    q, r, accepted = q_try, r_try, True
                    break
                step *= 0.5
            if not accepted:
                return q, False, used
        return q, np.abs(r).max() <= tol, used


def default_plant(subdivisions: int = 8, stiffness: float = 300.0,
                  total_mass: float = 0.3, pitch: float = 0.02,
                  anchor_out: float = 2.0, anchor_z: float = -0.04,
                  noise_std_pos: float = 1e-4, noise_std_vel: float = 1e-3,
                  **param_overrides):
    """Assemble the default cable-driven diamond truss plant.

    Measurements are positions and velocities of the end effector and the
    four elbows (p = 30); the performance output is the end-effector
    position (o = 3). Returns (plant, landmarks).
    """
    topo, landmarks = diamond_mesh(subdivisions=subdivisions, pitch=pitch,
                                   stiffness=stiffness, total_mass=total_mass)
    rest3 = topo.rest_positions.reshape(-1, 3)
    elbows = landmarks["elbows"]
    anchors = np.column_stack([rest3[elbows, 0] * anchor_out,
                               rest3[elbows, 1] * anchor_out,
                               np.full(4, anchor_z)])
    cables = CableSpec(attachment_nodes=elbows, anchors=anchors)
    meas = [landmarks["end_effector"], *elbows]
    maps = selection_output_maps(topo.node_count, meas, [landmarks["end_effector"]])
    n_meas = len(meas)
    noise = np.concatenate([np.full(3 * n_meas, noise_std_vel),
                            np.full(3 * n_meas, noise_std_pos)])
    params = PlantParams(measurement_noise_std=noise, **param_overrides)
    return Plant(topo, cables, params, maps), landmarks
