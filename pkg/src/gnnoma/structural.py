"""Linear truss finite elements and time-domain simulation.

Two-node bar elements with axial stiffness and consistent mass, assembled into
dense global matrices on the free DOFs. Modal targets come from a
Cholesky-reduced generalized eigenproblem; responses from average-acceleration
Newmark integration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, IllConditioned, SingularSystem
from .population import TrussStructure

SAMPLE_DT = 0.005
DURATION = 60.0
FORCE_RMS = 1000.0
NEWMARK_GAMMA = 0.5
NEWMARK_BETA = 0.25
SUBSTEPS = 8


@dataclass
class DofMap:
    """Global DOF numbering: node ``i`` owns ``2i`` (x) and ``2i + 1`` (y)."""

    n_nodes: int
    free: np.ndarray
    constrained: np.ndarray

    @classmethod
    def from_supports(cls, supports: np.ndarray) -> "DofMap":
        flags = np.asarray(supports, dtype=bool).reshape(-1)
        return cls(len(supports), np.flatnonzero(~flags), np.flatnonzero(flags))

    @property
    def n_free(self) -> int:
        return len(self.free)

    def global_to_free(self) -> np.ndarray:
        """Lookup table global DOF -> free index, -1 where constrained."""
        out = np.full(2 * self.n_nodes, -1)
        out[self.free] = np.arange(self.n_free)
        return out

    def vertical_free(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes with a free vertical DOF and the matching free indices."""
        lookup = self.global_to_free()[1::2]
        nodes = np.flatnonzero(lookup >= 0)
        return nodes, lookup[nodes]


@dataclass
class SystemMatrices:
    K: np.ndarray
    M: np.ndarray
    C: np.ndarray | None = None


@dataclass
class ModalSolution:
    """Reference modal properties of the first ``k`` modes.

    ``mode_shapes`` holds absolute vertical components, one column per mode,
    each scaled to a maximum of exactly 1.
    """

    frequencies: np.ndarray
    damping_ratios: np.ndarray
    mode_shapes: np.ndarray

    @property
    def k(self) -> int:
        return len(self.frequencies)


@dataclass
class TimeHistory:
    accelerations: np.ndarray  # (N, P) vertical node accelerations
    dt: float = SAMPLE_DT

    @property
    def n_channels(self) -> int:
        return self.accelerations.shape[0]

    @property
    def n_samples(self) -> int:
        return self.accelerations.shape[1]

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    def discard(self, seconds: float) -> "TimeHistory":
        start = int(round(seconds / self.dt))
        return TimeHistory(self.accelerations[:, start:], self.dt)


def element_matrices(xy_a, xy_b, E, A, rho):
    """Global-frame 4x4 stiffness and consistent mass of one bar."""
    d = np.asarray(xy_b, float) - np.asarray(xy_a, float)
    L = np.hypot(*d)
    c, s = d / L
    t = np.array([[c * c, c * s], [c * s, s * s]])
    k = E * A / L * np.block([[t, -t], [-t, t]])
    eye = np.eye(2)
    m = rho * A * L / 6.0 * np.block([[2 * eye, eye], [eye, 2 * eye]])
    return k, m


def assemble(truss: TrussStructure, check: bool = True) -> tuple[SystemMatrices, DofMap]:
    n = 2 * truss.n_nodes
    K = np.zeros((n, n))
    M = np.zeros((n, n))
    for (i, j), E, A, rho in zip(truss.edges, truss.youngs_modulus, truss.area,
                                 truss.density):
        k, m = element_matrices(truss.nodes[i], truss.nodes[j], E, A, rho)
        dofs = np.array([2 * i, 2 * i + 1, 2 * j, 2 * j + 1])
        K[np.ix_(dofs, dofs)] += k
        M[np.ix_(dofs, dofs)] += m
    dm = DofMap.from_supports(truss.supports)
    f = dm.free
    K = K[np.ix_(f, f)]
    M = M[np.ix_(f, f)]
    # exact symmetry regardless of summation order
    K = 0.5 * (K + K.T)
    M = 0.5 * (M + M.T)
    if check:
        try:
            np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("stiffness matrix is not positive definite") from exc
    return SystemMatrices(K, M), dm


def solve_modes(K: np.ndarray, M: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Smallest ``k`` eigenpairs of ``K phi = w^2 M phi``.

    Returns circular frequencies (rad/s, ascending) and mass-normalized shapes as
    columns.
    """
    n = K.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k={k} outside 1..{n}")
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("mass matrix is not positive definite") from exc
    tmp = linalg.solve_triangular(L, K, lower=True)
    A = linalg.solve_triangular(L, tmp.T, lower=True)
    A = 0.5 * (A + A.T)
    lam, y = np.linalg.eigh(A)
    lam, y = lam[:k], y[:, :k]
    phi = linalg.solve_triangular(L.T, y, lower=False)
    if np.any(lam <= 0):
        raise SingularSystem("non-positive eigenvalue")
    return np.sqrt(lam), phi


def rayleigh_coefficients(w_a: float, w_b: float, zeta_a: float, zeta_b: float):
    if w_b / w_a < 1.01:
        raise IllConditioned(f"anchor frequencies too close ({w_a:.4g}, {w_b:.4g})")
    A = 0.5 * np.array([[1.0 / w_a, w_a], [1.0 / w_b, w_b]])
    alpha, beta = np.linalg.solve(A, [zeta_a, zeta_b])
    return float(alpha), float(beta)


def rayleigh_ratios(alpha: float, beta: float, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, float)
    return 0.5 * (alpha / w + beta * w)


def rayleigh_damping(K, M, w, zeta_targets, anchors=(0, 3)):
    """Rayleigh damping matched to ``zeta_targets`` at two anchor modes.

    Returns ``(C, Z, (alpha, beta))`` with ``Z`` the ratio of every mode in ``w``.
    """
    w = np.asarray(w, float)
    ia, ib = anchors
    za, zb = zeta_targets
    for z in (za, zb):
        if not 0 < z < 0.2:
            raise ConfigError(f"damping target {z} outside (0, 0.2)")
    alpha, beta = rayleigh_coefficients(w[ia], w[ib], za, zb)
    C = alpha * M + beta * K
    return C, rayleigh_ratios(alpha, beta, w), (alpha, beta)


def n_steps(dt: float, duration: float) -> int:
    return int(round(duration / dt))


def white_noise_forces(excited_nodes, dt: float, duration: float, amplitude_rms: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Independent Gaussian vertical forces, one row per excited node."""
    if duration <= 0 or amplitude_rms <= 0:
        raise ConfigError("duration and amplitude must be positive")
    return rng.normal(0.0, amplitude_rms, size=(len(excited_nodes), n_steps(dt, duration)))


def simulate_newmark(system: SystemMatrices, dofmap: DofMap, excited_nodes, forces,
                     dt: float = SAMPLE_DT, duration: float | None = None,
                     u0=None, v0=None, return_displacements: bool = False,
                     substeps: int = 1):
    """Average-acceleration Newmark response from rest (or ``u0``, ``v0``).

    ``forces[r, p]`` is the vertical load on ``excited_nodes[r]`` at sample ``p``.
    With ``substeps > 1`` the integrator runs at ``dt / substeps`` on linearly
    interpolated loads and only every sample instant is recorded, which shrinks
    the scheme's period elongation by ``substeps**2``.

    Returns a :class:`TimeHistory` of vertical accelerations for every node;
    nodes with a constrained vertical DOF produce zero rows.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    forces = np.atleast_2d(np.asarray(forces, float))
    P = forces.shape[1] if duration is None else n_steps(dt, duration)
    K, M = system.K, system.M
    C = system.C if system.C is not None else np.zeros_like(K)
    n = K.shape[0]

    lookup = dofmap.global_to_free()
    rows = lookup[2 * np.asarray(excited_nodes, int) + 1]
    if np.any(rows < 0):
        raise ConfigError("excited node has a constrained vertical DOF")
    Fmat = np.zeros((n, P))
    if len(rows):
        np.add.at(Fmat, rows, forces[:, :P])

    g, b = NEWMARK_GAMMA, NEWMARK_BETA
    h = dt / substeps
    a0 = 1.0 / (b * h * h)
    a1 = g / (b * h)
    a2 = 1.0 / (b * h)
    a3 = 1.0 / (2 * b) - 1.0
    a4 = g / b - 1.0
    a5 = h / 2.0 * (g / b - 2.0)
    a6 = h * (1.0 - g)
    a7 = h * g
    K_eff = K + a0 * M + a1 * C
    try:
        cf = linalg.cho_factor(K_eff)
    except linalg.LinAlgError as exc:
        raise SingularSystem("effective stiffness is not positive definite") from exc

    # One step is linear in the state z = [u, v, a] and the new load:
    # z_next = T z + G f_next. Precompute both so the loop is a single matvec.
    Su = linalg.cho_solve(cf, a0 * M + a1 * C)
    Sv = linalg.cho_solve(cf, a2 * M + a4 * C)
    Sa = linalg.cho_solve(cf, a3 * M + a5 * C)
    G_u = linalg.cho_solve(cf, np.eye(n))
    I = np.eye(n)
    Tu = np.hstack([Su, Sv, Sa])
    Ta = np.hstack([a0 * (Su - I), a0 * Sv - a2 * I, a0 * Sa - a3 * I])
    Tv = np.hstack([np.zeros((n, n)), I, a6 * I]) + a7 * Ta
    T = np.vstack([Tu, Tv, Ta])
    G = np.vstack([G_u, a7 * a0 * G_u, a0 * G_u])
    # Over one sample: z_p = T^s z_{p-1} + Gp f_{p-1} + Gn f_p, where substep i
    # sees the load f_{p-1} + (i/s)(f_p - f_{p-1}).
    Gp = np.zeros_like(G)
    Gn = np.zeros_like(G)
    Tpow = np.eye(3 * n)
    for i in range(substeps, 0, -1):
        TG = Tpow @ G
        Gp += (1.0 - i / substeps) * TG
        Gn += (i / substeps) * TG
        Tpow = T @ Tpow
    T = Tpow
    drive = Gn @ Fmat
    drive[:, 1:] += Gp @ Fmat[:, :-1]

    u = np.zeros(n) if u0 is None else np.asarray(u0, float)
    v = np.zeros(n) if v0 is None else np.asarray(v0, float)
    a = np.linalg.solve(M, Fmat[:, 0] - C @ v - K @ u)
    z = np.concatenate([u, v, a])
    Z = np.empty((3 * n, P))
    Z[:, 0] = z
    for p in range(1, P):
        z = T @ z + drive[:, p]
        Z[:, p] = z

    nodes, free_rows = dofmap.vertical_free()
    acc = np.zeros((dofmap.n_nodes, P))
    acc[nodes] = Z[2 * n + free_rows]
    hist = TimeHistory(acc, dt)
    if return_displacements:
        return hist, Z[:n], Z[n:2 * n]
    return hist


def vertical_shapes(phi: np.ndarray, dofmap: DofMap) -> np.ndarray:
    """Absolute vertical components per node, each column scaled to max 1."""
    nodes, free_rows = dofmap.vertical_free()
    out = np.zeros((dofmap.n_nodes, phi.shape[1]))
    out[nodes] = np.abs(phi[free_rows])
    peak = out.max(axis=0)
    if np.any(peak <= 0):
        raise SingularSystem("mode without vertical motion")
    return out / peak


def modal_targets(truss: TrussStructure, k: int = 4, zeta_targets=None,
                  anchors=(0, 3)) -> ModalSolution:
    if k < 1:
        raise ConfigError("k must be >= 1")
    zeta_targets = truss.zeta_anchors if zeta_targets is None else zeta_targets
    system, dm = assemble(truss)
    n_modes = max(k, anchors[1] + 1)
    w, phi = solve_modes(system.K, system.M, n_modes)
    _, Z, _ = rayleigh_damping(system.K, system.M, w, zeta_targets, anchors)
    return ModalSolution(
        frequencies=w[:k] / (2 * np.pi),
        damping_ratios=Z[:k],
        mode_shapes=vertical_shapes(phi[:, :k], dm),
    )


def simulate_truss(truss: TrussStructure, rng: np.random.Generator,
                   dt: float = SAMPLE_DT, duration: float = DURATION,
                   amplitude_rms: float = FORCE_RMS, anchors=(0, 3),
                   substeps: int = SUBSTEPS) -> TimeHistory:
    """White-noise forced response of a truss with its Rayleigh damping."""
    system, dm = assemble(truss)
    w, _ = solve_modes(system.K, system.M, anchors[1] + 1)
    system.C, _, _ = rayleigh_damping(system.K, system.M, w, truss.zeta_anchors, anchors)
    forces = white_noise_forces(truss.excited_nodes, dt, duration, amplitude_rms, rng)
    return simulate_newmark(system, dm, truss.excited_nodes, forces, dt, duration,
                            substeps=substeps)
