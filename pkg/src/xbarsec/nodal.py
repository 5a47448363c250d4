"""DC nodal analysis of the passive crossbar's resistive network.

The network model:

* With zero line resistance each row wire and each column wire collapses to
  a single node, joined by the device conductances.
* With nonzero line resistance every wire is a chain of segments: row wire
  ``i`` has one node per column crossing, column wire ``j`` one node per
  row crossing (``2*n*m`` internal nodes), plus one terminal node per row
  (the drive point, attached at the ``j = 0`` end) and per column (the
  sense point, attached at the ``i = n-1`` end).

Driven rows and sensed columns are Dirichlet nodes; floating rows/columns
stay in the unknown set, which is how sneak paths through unselected lines
enter the solution.  Systems up to 4096 unknowns are solved by a dense
symmetric (Cholesky) factorization, larger ones by conjugate gradients
with a 1e-12 residual target; every solve is residual-checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import cg as sparse_cg

from .errors import IllPosedNetworkError

DENSE_UNKNOWN_LIMIT = 4096
RESIDUAL_LIMIT = 1e-10
CG_RTOL = 1e-12


@dataclass
class NodalSolution:
    """Column currents plus solver diagnostics."""

    column_currents: np.ndarray
    residual: float
    unknowns: int
    node_voltages: np.ndarray | None = None


def _laplacian_from_edges(num_nodes: int, ia: np.ndarray, ib: np.ndarray,
                          g: np.ndarray) -> np.ndarray:
    lap = np.zeros((num_nodes, num_nodes))
    np.add.at(lap, (ia, ib), -g)
    np.add.at(lap, (ib, ia), -g)
    np.add.at(lap, (ia, ia), g)
    np.add.at(lap, (ib, ib), g)
    return lap


def _solve_partitioned(lap: np.ndarray, free: np.ndarray, dirichlet: np.ndarray,
                       v_dirichlet: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve for free-node voltages given Dirichlet boundary values.

    Returns the full voltage vector and the relative residual of the
    reduced solve.
    """
    voltages = np.zeros(lap.shape[0])
    voltages[dirichlet] = v_dirichlet
    if free.size == 0:
        return voltages, 0.0
    a = lap[np.ix_(free, free)]
    b = -lap[np.ix_(free, dirichlet)] @ v_dirichlet
    if free.size <= DENSE_UNKNOWN_LIMIT:
        try:
            c, low = sla.cho_factor(a)
            x = sla.cho_solve((c, low), b)
        except np.linalg.LinAlgError as exc:
            raise IllPosedNetworkError(
                "network matrix is not positive definite: some floating nodes "
                "have no conductive path to a driven or sensed terminal") from exc
    else:
        sp = coo_matrix(a).tocsr()
        x, info = sparse_cg(sp, b, rtol=CG_RTOL, atol=0.0, maxiter=40 * free.size)
        if info != 0:
            raise IllPosedNetworkError(f"conjugate-gradient solve failed (info={info})")
    norm_b = np.linalg.norm(b)
    residual = np.linalg.norm(a @ x - b) / (norm_b if norm_b > 0 else 1.0)
    if not np.isfinite(residual) or residual > RESIDUAL_LIMIT:
        raise IllPosedNetworkError(f"solver residual {residual:.3e} exceeds {RESIDUAL_LIMIT:.0e}")
    voltages[free] = x
    return voltages, residual


def solve_crossbar_network(conductances: np.ndarray, line_resistance: float,
                           row_voltages: np.ndarray, sensed_columns: np.ndarray,
                           keep_voltages: bool = False) -> NodalSolution:
    """Column currents of an ``n x m`` crossbar under DC drive.

    ``row_voltages``: one entry per row; ``NaN`` marks a floating row.
    ``sensed_columns``: boolean mask; sensed columns sit at virtual ground
    and report the current flowing into them, floating columns report 0.
    """
    g_dev = np.asarray(conductances, dtype=float)
    n, m = g_dev.shape
    row_voltages = np.asarray(row_voltages, dtype=float)
    sensed = np.asarray(sensed_columns, dtype=bool)
    if row_voltages.shape != (n,):
        raise ValueError(f"expected {n} row voltages, got {row_voltages.shape}")
    if sensed.shape != (m,):
        raise ValueError(f"expected {m} column flags, got {sensed.shape}")
    if not np.all(g_dev > 0):
        raise IllPosedNetworkError("every device must have positive conductance")
    driven = ~np.isnan(row_voltages)
    if not driven.any() and not sensed.any():
        raise IllPosedNetworkError("no driven row and no sensed column: network is floating")

    if line_resistance == 0.0:
        return _solve_ideal_wires(g_dev, row_voltages, driven, sensed, keep_voltages)
    return _solve_segmented_wires(g_dev, 1.0 / line_resistance, row_voltages,
                                  driven, sensed, keep_voltages)


def _solve_ideal_wires(g_dev, row_voltages, driven, sensed, keep_voltages):
    n, m = g_dev.shape
    # nodes: rows 0..n-1, columns n..n+m-1
    rows = np.repeat(np.arange(n), m)
    cols = n + np.tile(np.arange(m), n)
    lap = _laplacian_from_edges(n + m, rows, cols, g_dev.ravel())

    dirichlet = np.concatenate([np.flatnonzero(driven), n + np.flatnonzero(sensed)])
    v_dirichlet = np.concatenate([row_voltages[driven], np.zeros(int(sensed.sum()))])
    free = np.setdiff1d(np.arange(n + m), dirichlet)
    voltages, residual = _solve_partitioned(lap, free, dirichlet, v_dirichlet)

    v_rows = voltages[:n]
    currents = np.where(sensed, g_dev.T @ v_rows, 0.0)
    return NodalSolution(currents, residual, int(free.size),
                         voltages if keep_voltages else None)


def _solve_segmented_wires(g_dev, g_wire, row_voltages, driven, sensed, keep_voltages):
    n, m = g_dev.shape
    num_nodes = 2 * n * m + n + m
    r_node = lambda i, j: i * m + j                    # row wire i at column j
    c_node = lambda i, j: n * m + i * m + j            # column wire j at row i
    t_node = 2 * n * m + np.arange(n)                  # row drive terminals
    s_node = 2 * n * m + n + np.arange(m)              # column sense terminals

    ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    edges_a = [r_node(ii, jj).ravel()]
    edges_b = [c_node(ii, jj).ravel()]
    edges_g = [g_dev.ravel()]
    if m > 1:  # row wire segments
        ia, ja = np.meshgrid(np.arange(n), np.arange(m - 1), indexing="ij")
        edges_a.append(r_node(ia, ja).ravel())
        edges_b.append(r_node(ia, ja + 1).ravel())
        edges_g.append(np.full(n * (m - 1), g_wire))
    if n > 1:  # column wire segments
        ia, ja = np.meshgrid(np.arange(n - 1), np.arange(m), indexing="ij")
        edges_a.append(c_node(ia, ja).ravel())
        edges_b.append(c_node(ia + 1, ja).ravel())
        edges_g.append(np.full((n - 1) * m, g_wire))
    edges_a.append(t_node)                             # terminal attachments
    edges_b.append(r_node(np.arange(n), 0))
    edges_g.append(np.full(n, g_wire))
    edges_a.append(s_node)
    edges_b.append(c_node(n - 1, np.arange(m)))
    edges_g.append(np.full(m, g_wire))

    lap = _laplacian_from_edges(num_nodes,
                                np.concatenate(edges_a),
                                np.concatenate(edges_b),
                                np.concatenate(edges_g))

    dirichlet = np.concatenate([t_node[driven], s_node[sensed]])
    v_dirichlet = np.concatenate([row_voltages[driven], np.zeros(int(sensed.sum()))])
    free = np.setdiff1d(np.arange(num_nodes), dirichlet)
    voltages, residual = _solve_partitioned(lap, free, dirichlet, v_dirichlet)

    idx_last = c_node(n - 1, np.arange(m))
    currents = np.where(sensed, g_wire * (voltages[idx_last] - voltages[s_node]), 0.0)
    return NodalSolution(currents, residual, int(free.size),
                         voltages if keep_voltages else None)


class CachedReadSolver:
    """Repeated same-crossbar reads with all columns sensed at virtual ground.

    Precomputes, for fixed conductances, the factorization pieces that let a
    read with any driven/floating row pattern reduce to an O(n^2 + m*n)
    update plus one k x k solve (k = number of floating rows).  Exact same
    network model as ``solve_crossbar_network``; used for PUF evaluation
    where thousands of challenge reads hit one crossbar.
    """

    def __init__(self, conductances: np.ndarray, line_resistance: float):
        self.g = np.asarray(conductances, dtype=float)
        self.n, self.m = self.g.shape
        self.line_resistance = float(line_resistance)
        if self.line_resistance == 0.0:
            return
        n, m = self.n, self.m
        g_wire = 1.0 / self.line_resistance
        num_internal = 2 * n * m
        r_idx = lambda i, j: i * m + j
        c_idx = lambda i, j: n * m + i * m + j

        ii, jj = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
        ia = [r_idx(ii, jj).ravel()]
        ib = [c_idx(ii, jj).ravel()]
        gg = [self.g.ravel()]
        if m > 1:
            ra, ca = np.meshgrid(np.arange(n), np.arange(m - 1), indexing="ij")
            ia.append(r_idx(ra, ca).ravel()); ib.append(r_idx(ra, ca + 1).ravel())
            gg.append(np.full(n * (m - 1), g_wire))
        if n > 1:
            ra, ca = np.meshgrid(np.arange(n - 1), np.arange(m), indexing="ij")
            ia.append(c_idx(ra, ca).ravel()); ib.append(c_idx(ra + 1, ca).ravel())
            gg.append(np.full((n - 1) * m, g_wire))
        lap = _laplacian_from_edges(num_internal, np.concatenate(ia),
                                    np.concatenate(ib), np.concatenate(gg))
        # terminal attachments appear only on the internal diagonal
        drive_rows = r_idx(np.arange(n), 0)
        sense_rows = c_idx(n - 1, np.arange(m))
        lap[drive_rows, drive_rows] += g_wire
        lap[sense_rows, sense_rows] += g_wire

        factor = sla.cho_factor(lap)
        unit = np.zeros((num_internal, n))
        unit[drive_rows, np.arange(n)] = 1.0
        w = sla.cho_solve(factor, unit)          # internal response to unit injections
        self._g_wire = g_wire
        self._m_block = w[drive_rows, :]         # n x n, symmetric
        self._n_block = w[sense_rows, :]         # m x n

    def read(self, row_voltages: np.ndarray) -> np.ndarray:
        """Column currents for a drive pattern (NaN entries float)."""
        v = np.asarray(row_voltages, dtype=float)
        driven = ~np.isnan(v)
        if self.line_resistance == 0.0:
            # floating rows settle to 0 because every column is at virtual ground
            vr = np.where(driven, v, 0.0)
            return self.g.T @ vr
        g_w = self._g_wire
        d = np.flatnonzero(driven)
        f = np.flatnonzero(~driven)
        drive_part = self._m_block[:, d] @ v[d] if d.size else np.zeros(self.n)
        sense_part = self._n_block[:, d] @ v[d] if d.size else np.zeros(self.m)
        if f.size:
            schur = g_w * np.eye(f.size) - g_w**2 * self._m_block[np.ix_(f, f)]
            rhs = g_w**2 * drive_part[f]
            v_f = sla.solve(schur, rhs, assume_a="pos")
            sense_part = sense_part + self._n_block[:, f] @ v_f
        return g_w**2 * sense_part

    def read_many(self, drive_patterns: np.ndarray) -> np.ndarray:
        """Stacked ``read`` over rows of a (k, n) drive matrix."""
        drives = np.asarray(drive_patterns, dtype=float)
        if self.line_resistance == 0.0:
            return np.nan_to_num(drives, nan=0.0) @ self.g
        return np.array([self.read(v) for v in drives])
