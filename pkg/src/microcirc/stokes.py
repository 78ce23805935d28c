"""Periodic Stokes unit-cell problems on a MAC staggered grid.

Solves -mu*lap(w) + grad(pi) = e_i, div(w) = 0 on the fluid phase of a
voxelized unit cell and averages the solutions into the effective
permeability tensor.  Velocity unknowns live on voxel faces, pressures at
voxel centers; the coupled saddle-point system is solved with MINRES after
projecting out the constant-pressure nullspace via a rank-one augmentation.

Wall treatment on the staircase boundary: face-normal velocities on
fluid/solid faces are pinned to zero (the wall passes through the face), and
tangential stencil neighbours that fall inside a solid slab are mirrored
(ghost value -u), which places the no-slip plane halfway between the face
centers.  Staircase corners fall back to a plain zero neighbour.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import LinearOperator, minres

from .errors import (
    ConvergenceError,
    MixedProvenanceError,
    SingularSystemError,
    ValidationError,
)
from .geometry import ARTERY_VEIN, CellMask, Facet, require_fluid


class BcKind(Enum):
    FAT_CELL = "fat_cell"        # fully periodic, no-slip on the phase walls
    SKIN_CASE1 = "skin_case1"    # periodic horizontally; slip bottom, no-slip top
    SKIN_CASE2 = "skin_case2"    # fully periodic, no-slip on the blood walls


@dataclass(frozen=True)
class StokesCellProblem:
    mask: CellMask
    bc_kind: BcKind
    forcing_direction: int
    fluid_phase: object = None   # required for FAT_CELL; blood union otherwise
    viscosity: float = 1.0
    tol: float = 1e-8
    maxiter: int = 0             # 0 -> automatic budget

    def resolved_phase(self):
        if self.bc_kind is BcKind.FAT_CELL:
            if self.fluid_phase is None:
                raise ValidationError(
                    ["FAT_CELL problems need an explicit fluid_phase (artery/vein)"]
                )
            return self.fluid_phase
        return ARTERY_VEIN if self.fluid_phase is None else self.fluid_phase

    def validate(self):
        nd = self.mask.dim
        if self.viscosity <= 0:
            raise ValidationError(["viscosity must be positive"])
        per = self.mask.periodic
        if self.bc_kind is BcKind.SKIN_CASE1:
            if per[-1]:
                raise ValidationError(
                    ["SKIN_CASE1 needs a mask with a non-periodic vertical axis"]
                )
            if not (0 <= self.forcing_direction < nd - 1):
                raise ValidationError(
                    [f"SKIN_CASE1 forcing must be horizontal (0..{nd - 2})"]
                )
        else:
            if not all(per):
                raise ValidationError(
                    [f"{self.bc_kind.value} needs a fully periodic mask"]
                )
            if not (0 <= self.forcing_direction < nd):
                raise ValidationError([f"forcing direction out of range"])
        return self


@dataclass(frozen=True)
class StokesCellSolution:
    """Velocity on staggered faces, zero-mean pressure, residual report."""

    velocity: tuple                # one face array per axis, zeros off-fluid
    pressure: np.ndarray
    momentum_residual: float
    divergence_residual: float
    iterations: int
    provenance: dict = field(repr=False)


def _mask_digest(mask):
    hsh = hashlib.sha256()
    hsh.update(bytes(str(mask.grid.resolution), "ascii"))
    hsh.update(mask.phases.tobytes())
    return hsh.hexdigest()[:16]


def _shift_index(arr, side, axis, periodic, fill=-1):
    """Value at f of the result = arr[f + side*e_axis]; `fill` outside."""
    if periodic:
        return np.roll(arr, -side, axis=axis)
    out = np.full_like(arr, fill)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if side == +1:
        src[axis] = slice(1, None)
        dst[axis] = slice(0, -1)
    else:
        src[axis] = slice(0, -1)
        dst[axis] = slice(1, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _face_flanks(fluid, d, periodic_d):
    """(left-cell, right-cell) fluid indicators aligned with the d-face grid."""
    if periodic_d:
        return np.roll(fluid, 1, axis=d), fluid
    m = fluid.shape[d]
    shape = list(fluid.shape)
    shape[d] = m + 1
    left = np.zeros(shape, dtype=bool)
    right = np.zeros(shape, dtype=bool)
    sl = [slice(None)] * fluid.ndim
    sl[d] = slice(1, m + 1)
    left[tuple(sl)] = fluid
    sl[d] = slice(0, m)
    right[tuple(sl)] = fluid
    return left, right


class _MacSystem:
    """Sparse saddle-point assembly for one fluid mask / bc combination."""

    def __init__(self, mask, fluid, mu, bc_kind):
        self.res = mask.grid.resolution
        self.h = mask.grid.spacing
        self.nd = mask.dim
        self.fluid = fluid
        self.mu = mu
        self.bc_kind = bc_kind
        self.periodic = mask.periodic
        self._build_indices()
        self._assemble()

    def _build_indices(self):
        self.active = []
        self.vel_index = []
        offset = 0
        for d in range(self.nd):
            fl, fr = _face_flanks(self.fluid, d, self.periodic[d])
            act = fl & fr
            idx = np.full(act.shape, -1, dtype=np.int64)
            idx[act] = offset + np.arange(int(act.sum()))
            offset += int(act.sum())
            self.active.append(act)
            self.vel_index.append(idx)
        self.n_vel = offset
        self.cell_index = np.full(self.res, -1, dtype=np.int64)
        self.n_cells = int(self.fluid.sum())
        self.cell_index[self.fluid] = self.n_vel + np.arange(self.n_cells)
        self.n_total = self.n_vel + self.n_cells

    def _assemble(self):
        rows, cols, vals = [], [], []
        mu, h = self.mu, self.h
        wall_faces = 0
        for d in range(self.nd):
            act = self.active[d]
            if not act.any():
                continue
            aidx = self.vel_index[d]
            fl, fr = _face_flanks(self.fluid, d, self.periodic[d])
            wall_faces += int((fl ^ fr).sum())
            diag = np.zeros(act.shape)
            for e in range(self.nd):
                w = mu / h[e] ** 2
                for side in (+1, -1):
                    if e == d:
                        nbr = _shift_index(aidx, side, e, self.periodic[e])
                        diag[act] += w
                        take = act & (nbr >= 0)
                        rows.append(aidx[take])
                        cols.append(nbr[take])
                        vals.append(np.full(int(take.sum()), -w))
                        continue
                    nbr = _shift_index(aidx, side, e, self.periodic[e])
                    nl = _shift_index(fl.astype(np.int8), side, e,
                                      self.periodic[e], fill=-1)
                    nr = _shift_index(fr.astype(np.int8), side, e,
                                      self.periodic[e], fill=-1)
                    in_domain = nl >= 0
                    both_solid = (nl == 0) & (nr == 0)
                    diag[act & in_domain] += w
                    diag[act & both_solid] += w      # mirror ghost: u -> -u
                    if not self.periodic[e]:
                        # outside the cell: bottom is a free-slip plane
                        # (no contribution), the top is a no-slip wall at the
                        # boundary plane (mirror ghost).
                        edge = [slice(None)] * act.ndim
                        if side == +1:
                            edge[e] = act.shape[e] - 1
                            out_mask = np.zeros(act.shape, dtype=bool)
                            out_mask[tuple(edge)] = True
                            diag[act & out_mask] += 2 * w
                    take = act & (nbr >= 0)
                    rows.append(aidx[take])
                    cols.append(nbr[take])
                    vals.append(np.full(int(take.sum()), -w))
            rows.append(aidx[act])
            cols.append(aidx[act])
            vals.append(diag[act])

            # pressure gradient / divergence coupling (face k: cells k-1 | k)
            if self.periodic[d]:
                cl = _shift_index(self.cell_index, -1, d, True)
                cr = self.cell_index
            else:
                m = self.res[d]
                shape = list(self.res)
                shape[d] = m + 1
                cl = np.full(shape, -1, dtype=np.int64)
                cr = np.full(shape, -1, dtype=np.int64)
                sl = [slice(None)] * self.nd
                sl[d] = slice(1, m + 1)
                cl[tuple(sl)] = self.cell_index
                sl[d] = slice(0, m)
                cr[tuple(sl)] = self.cell_index
            ginv = 1.0 / h[d]
            take = act
            for cells, sgn in ((cr, +ginv), (cl, -ginv)):
                f = aidx[take]
                c = cells[take]
                rows.append(f)
                cols.append(c)
                vals.append(np.full(len(f), sgn))
                rows.append(c)
                cols.append(f)
                vals.append(np.full(len(f), sgn))
        if self.n_vel == 0:
            raise SingularSystemError("no active velocity faces in the fluid phase")
        if wall_faces == 0 and self.bc_kind is not BcKind.SKIN_CASE1:
            raise SingularSystemError(
                "fluid phase has no bounding walls; the forced periodic Stokes "
                "problem admits no steady solution"
            )
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        self.matrix = coo_matrix(
            (vals, (rows, cols)), shape=(self.n_total, self.n_total)
        ).tocsr()
        diag = self.matrix.diagonal()
        inv = np.ones(self.n_total)
        inv[: self.n_vel] = 1.0 / diag[: self.n_vel]
        inv[self.n_vel:] = 2.0 * self.nd * self.mu
        self.precond_diag = inv

    def rhs(self, direction):
        b = np.zeros(self.n_total)
        act = self.active[direction]
        b[self.vel_index[direction][act]] = 1.0
        return b

    def solve(self, direction, tol, maxiter):
        b = self.rhs(direction)
        if not b.any():
            raise SingularSystemError(
                f"no active faces along forcing direction {direction}"
            )
        K = self.matrix
        n = self.n_total
        q = np.zeros(n)
        q[self.n_vel:] = 1.0 / np.sqrt(self.n_cells)
        alpha = 1.0 / self.mu

        def matvec(x):
            return K @ x + alpha * q * (q @ x)

        A = LinearOperator((n, n), matvec=matvec)
        M = LinearOperator((n, n), matvec=lambda x: self.precond_diag * x)
        budget = maxiter or max(4000, 40 * int(round(n ** 0.5)) * 10)
        it_count = [0]

        def cb(_):
            it_count[0] += 1

        x, info = minres(A, b, rtol=tol * 1e-2, maxiter=budget, M=M, callback=cb)
        u = x[: self.n_vel]
        p = x[self.n_vel:]
        p = p - p.mean()
        xfix = np.concatenate([u, p])
        r = K @ xfix - b
        mom = float(np.abs(r[: self.n_vel]).max(initial=0.0))
        div = float(np.abs(r[self.n_vel:]).max(initial=0.0))
        bnorm = float(np.abs(b).max())
        if max(mom, div) > tol * bnorm * 10:
            raise ConvergenceError(
                f"MINRES stalled: momentum residual {mom:.3e}, divergence "
                f"{div:.3e} after {it_count[0]} iterations (tol {tol:.1e})",
                residual=max(mom, div),
                iterations=it_count[0],
            )
        return u, p, mom, div, it_count[0]


def solve_stokes_cell(problem: StokesCellProblem) -> StokesCellSolution:
    """Solve one forcing direction of a Stokes cell problem.

    Raises ``NoFluidError`` / ``DisconnectedFluidError`` when the fluid phase
    is empty or fails the percolation precondition, and ``ConvergenceError``
    when the Krylov iteration cannot reach the requested residual.
    """
    problem.validate()
    mask = problem.mask
    phase = problem.resolved_phase()
    need_percolation = ()
    if problem.bc_kind in (BcKind.FAT_CELL, BcKind.SKIN_CASE2):
        need_percolation = (problem.forcing_direction,)
    require_fluid(mask, phase, need_percolation,
                  kind_label=f"({problem.bc_kind.value})")

    fluid = mask.phase_mask(phase)
    system = _MacSystem(mask, fluid, problem.viscosity, problem.bc_kind)
    u, p, mom, div, its = system.solve(
        problem.forcing_direction, problem.tol, problem.maxiter
    )

    vel = []
    for d in range(mask.dim):
        arr = np.zeros(system.active[d].shape)
        arr[system.active[d]] = u[
            system.vel_index[d][system.active[d]] ]
        vel.append(arr)
    pressure = np.zeros(mask.grid.resolution)
    pressure[fluid] = p

    prov = {
        "bc_kind": problem.bc_kind.value,
        "viscosity": problem.viscosity,
        "fluid_phase": str(phase),
        "forcing_direction": problem.forcing_direction,
        "mask_digest": _mask_digest(mask),
        "resolution": mask.grid.resolution,
        "tol": problem.tol,
        "iterations": its,
        "momentum_residual": mom,
        "divergence_residual": div,
    }
    return StokesCellSolution(
        velocity=tuple(vel),
        pressure=pressure,
        momentum_residual=mom,
        divergence_residual=div,
        iterations=its,
        provenance=prov,
    )


@dataclass(frozen=True)
class PermeabilityTensor:
    matrix: np.ndarray
    provenance: dict = field(repr=False)

    @property
    def dim(self):
        return self.matrix.shape[0]


def assemble_permeability(solutions, mask: CellMask) -> PermeabilityTensor:
    """Average cell solutions into K[j][i] = mean over the cell of w^i_j.

    Expects one solution per forcing direction (n for periodic cells, n-1
    horizontal ones for the SKIN_CASE1 family), all produced from the same
    mask, boundary-condition kind, and viscosity.
    """
    if not solutions:
        raise MixedProvenanceError("no solutions given")
    prov0 = solutions[0].provenance
    digest = _mask_digest(mask)
    for sol in solutions:
        pr = sol.provenance
        if (pr["mask_digest"] != digest
                or pr["bc_kind"] != prov0["bc_kind"]
                or pr["viscosity"] != prov0["viscosity"]
                or pr["fluid_phase"] != prov0["fluid_phase"]):
            raise MixedProvenanceError(
                "solutions disagree on mask/bc/viscosity provenance"
            )
    nd = mask.dim
    ncomp = nd - 1 if prov0["bc_kind"] == BcKind.SKIN_CASE1.value else nd
    seen = sorted(s.provenance["forcing_direction"] for s in solutions)
    if seen != list(range(ncomp)):
        raise MixedProvenanceError(
            f"need one solution per direction 0..{ncomp - 1}, got {seen}"
        )
    vol = mask.grid.cell_volume
    K = np.zeros((ncomp, ncomp))
    for sol in solutions:
        i = sol.provenance["forcing_direction"]
        for j in range(ncomp):
            K[j, i] = vol * cell_component_average(sol.velocity[j], j,
                                                   mask.periodic[j]).sum()
    prov = dict(prov0)
    prov.pop("forcing_direction", None)
    prov["directions"] = seen
    return PermeabilityTensor(matrix=K, provenance=prov)


def cell_component_average(face_values, axis, periodic):
    """Average a face-centered component to cell centers (midpoint rule)."""
    if periodic:
        return 0.5 * (face_values + np.roll(face_values, -1, axis=axis))
    lo = [slice(None)] * face_values.ndim
    hi = [slice(None)] * face_values.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (face_values[tuple(lo)] + face_values[tuple(hi)])


__all__ = [
    "BcKind",
    "StokesCellProblem",
    "StokesCellSolution",
    "PermeabilityTensor",
    "solve_stokes_cell",
    "assemble_permeability",
    "Facet",
]
