"""Periodic vascular unit cells: voxelization, facet labels, and measures.

A unit cell is the cube [0,1]^n partitioned into artery, vein, and tissue
phases by axis-aligned primitives.  Three cell families exist:

* ``FAT_Y``       -- fat-layer cell, periodic in every axis, artery and vein
                     strictly disjoint;
* ``SKIN_Z1``     -- skin cell for the thin-layer regime, periodic in the
                     horizontal axes only, with real bottom/top boundaries;
* ``SKIN_Z2``     -- skin cell for the intermediate-depth regime, periodic in
                     every axis; artery and vein may touch on connection
                     surfaces.

Voxelization samples primitive signed-distance fields at voxel centers,
surface measures come from marching squares/cubes on the same fields, so the
reported areas converge to the smooth-geometry values instead of the
staircase overestimate.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from skimage import measure as _skmeasure

from .errors import (
    DisconnectedFluidError,
    NoFluidError,
    OverlapError,
    ParseError,
    ResolutionError,
    ValidationError,
)

TISSUE, ARTERY, VEIN = 0, 1, 2
PHASE_NAMES = {TISSUE: "tissue", ARTERY: "artery", VEIN: "vein"}
ARTERY_VEIN = "artery_vein"  # union pseudo-phase accepted by selectors


class CellKind(Enum):
    FAT_Y = "fat_y"
    SKIN_Z1 = "skin_z_case1"
    SKIN_Z2 = "skin_z_case2"


class Facet(IntEnum):
    """Classification of an inter-voxel (or domain-boundary) facet."""

    INTERIOR = 0
    WALL_ARTERY = 1   # Gamma_a in the fat cell, R_a in the skin cells
    WALL_VEIN = 2     # Gamma_v / R_v
    SIGMA = 3         # artery meets vein (skin cells only)
    BOTTOM = 4        # y_n = 0 boundary of the SKIN_Z1 cell
    TOP = 5           # y_n = 1 boundary of the SKIN_Z1 cell
    PERIODIC = 6      # same-phase facet on a periodic wrap


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Cylinder:
    """Axis-aligned through-cylinder (slab in 2D); wraps periodically."""

    axis: int
    center: tuple
    radius: float
    phase: int

    def sdf(self, points):
        d2 = np.zeros(points.shape[:-1])
        for d in range(points.shape[-1]):
            if d == self.axis:
                continue
            d2 = d2 + (points[..., d] - self.center[d]) ** 2
        return np.sqrt(d2) - self.radius

    def min_thickness(self):
        return 2.0 * self.radius

    def spans_axis(self, d):
        return d == self.axis


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    phase: int

    def sdf(self, points):
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        out = np.maximum(lo - points, points - hi)
        return out.max(axis=-1)

    def min_thickness(self):
        return min(h - l for l, h in zip(self.lo, self.hi))

    def spans_axis(self, d):
        return self.lo[d] <= 0.0 and self.hi[d] >= 1.0


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    phase: int

    def sdf(self, points):
        c = np.asarray(self.center)
        return np.sqrt(((points - c) ** 2).sum(axis=-1)) - self.radius

    def min_thickness(self):
        return 2.0 * self.radius

    def spans_axis(self, d):
        return False


PRIMITIVE_KINDS = {"cylinder": Cylinder, "box": Box, "sphere": Sphere}


@dataclass(frozen=True)
class UnitCellSpec:
    """Constructive description of one periodicity cell."""

    kind: CellKind
    dim: int
    primitives: tuple

    @property
    def periodic(self):
        """Boolean per axis; SKIN_Z1 has a non-periodic last (vertical) axis."""
        if self.kind is CellKind.SKIN_Z1:
            return tuple([True] * (self.dim - 1) + [False])
        return tuple([True] * self.dim)

    def phase_primitives(self, phase):
        return [p for p in self.primitives if p.phase == phase]

    def validate(self):
        problems = []
        if self.dim not in (2, 3):
            problems.append(f"dim must be 2 or 3, got {self.dim}")
        for i, p in enumerate(self.primitives):
            if p.phase not in (ARTERY, VEIN):
                problems.append(f"primitive {i}: phase must be artery or vein")
            if isinstance(p, Cylinder) and not (0 <= p.axis < self.dim):
                problems.append(f"primitive {i}: axis {p.axis} out of range")
            for d in range(self.dim):
                lo, hi = _extent(p, d)
                if self.periodic[d] and (lo < -1.0 or hi > 2.0):
                    problems.append(
                        f"primitive {i}: extends beyond one period in axis {d}"
                    )
        if problems:
            raise ValidationError(problems)
        return self


def _extent(prim, d):
    if isinstance(prim, Cylinder):
        if d == prim.axis:
            return 0.0, 1.0
        return prim.center[d] - prim.radius, prim.center[d] + prim.radius
    if isinstance(prim, Box):
        return prim.lo[d], prim.hi[d]
    return prim.center[d] - prim.radius, prim.center[d] + prim.radius


@dataclass(frozen=True)
class GridSpec:
    """Uniform structured grid on the unit cell."""

    resolution: tuple

    def __post_init__(self):
        if any(int(r) != r or r < 4 for r in self.resolution):
            raise ValidationError(
                [f"resolution must be integers >= 4 per axis, got {self.resolution}"]
            )
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))

    @property
    def dim(self):
        return len(self.resolution)

    @property
    def spacing(self):
        return tuple(1.0 / r for r in self.resolution)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))


# ---------------------------------------------------------------------------
# signed-distance sampling with periodic wrap


def _periodic_sdf(prim, points, periodic):
    """min over unit-lattice shifts of the primitive SDF (wrapped copies)."""
    dim = points.shape[-1]
    shift_axes = [d for d in range(dim) if periodic[d] and not prim.spans_axis(d)]
    best = prim.sdf(points)
    if not shift_axes:
        return best
    offsets = np.array(np.meshgrid(*([(-1.0, 0.0, 1.0)] * len(shift_axes)),
                                   indexing="ij")).reshape(len(shift_axes), -1).T
    for off in offsets:
        if not off.any():
            continue
        shifted = points.copy()
        for k, d in enumerate(shift_axes):
            shifted[..., d] = points[..., d] + off[k]
        best = np.minimum(best, prim.sdf(shifted))
    return best


def phase_sdf(spec, phase, points):
    """SDF of the union of one phase's primitives (+inf if none)."""
    prims = spec.phase_primitives(phase)
    if not prims:
        return np.full(points.shape[:-1], np.inf)
    out = _periodic_sdf(prims[0], points, spec.periodic)
    for p in prims[1:]:
        out = np.minimum(out, _periodic_sdf(p, points, spec.periodic))
    return out


def _grid_points(grid, staggered=True):
    axes = []
    for r in grid.resolution:
        h = 1.0 / r
        if staggered:
            axes.append((np.arange(r) + 0.5) * h)
        else:
            axes.append(np.arange(r + 1) * h)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


# ---------------------------------------------------------------------------
# mask construction


@dataclass(frozen=True)
class CellMask:
    """Voxelized unit cell with phase labels and classified facets.

    ``facets[d]`` labels the faces normal to axis ``d``; face ``k`` separates
    voxel layers ``k-1`` and ``k`` (wrapped on periodic axes, so the array has
    ``resolution[d]`` entries there and ``resolution[d]+1`` on the
    non-periodic vertical axis of a SKIN_Z1 cell).
    """

    spec: UnitCellSpec
    grid: GridSpec
    phases: np.ndarray
    facets: tuple

    @property
    def dim(self):
        return self.grid.dim

    @property
    def periodic(self):
        return self.spec.periodic

    def phase_mask(self, phase):
        if phase == ARTERY_VEIN:
            return (self.phases == ARTERY) | (self.phases == VEIN)
        return self.phases == phase

    def voxel_counts(self):
        return {
            ph: int((self.phases == ph).sum()) for ph in (TISSUE, ARTERY, VEIN)
        }


def build_mask(spec: UnitCellSpec, grid: GridSpec) -> CellMask:
    """Voxelize a cell spec: phase per voxel center, facet labels per face.

    Raises ``OverlapError`` when artery and vein overlap volumetrically (any
    cell kind) or touch across a facet in a FAT_Y cell, and
    ``ResolutionError`` when a primitive is thinner than two grid spacings.
    """
    spec.validate()
    if len(grid.resolution) != spec.dim:
        raise ValidationError([f"grid dim {grid.dim} != spec dim {spec.dim}"])
    hmax = max(grid.spacing)
    for i, prim in enumerate(spec.primitives):
        if prim.min_thickness() < 2.0 * hmax:
            raise ResolutionError(
                f"primitive {i} ({type(prim).__name__}) is thinner than 2h: "
                f"{prim.min_thickness():.4g} < {2 * hmax:.4g}"
            )

    pts = _grid_points(grid)
    in_a = phase_sdf(spec, ARTERY, pts) < 0.0
    in_v = phase_sdf(spec, VEIN, pts) < 0.0
    both = in_a & in_v
    if both.any():
        raise OverlapError(
            f"artery and vein primitives overlap volumetrically in "
            f"{int(both.sum())} voxels"
        )
    phases = np.zeros(grid.resolution, dtype=np.uint8)
    phases[in_a] = ARTERY
    phases[in_v] = VEIN

    facets = _classify_facets(spec, phases)
    return CellMask(spec=spec, grid=grid, phases=phases, facets=tuple(facets))


def _pair_label(left, right, kind):
    """Facet label from the two flanking phases (vectorized)."""
    lab = np.full(left.shape, Facet.INTERIOR, dtype=np.int8)
    wall = {ARTERY: Facet.WALL_ARTERY, VEIN: Facet.WALL_VEIN}
    for blood in (ARTERY, VEIN):
        hit = ((left == blood) & (right == TISSUE)) | (
            (right == blood) & (left == TISSUE)
        )
        lab[hit] = wall[blood]
    av = ((left == ARTERY) & (right == VEIN)) | ((left == VEIN) & (right == ARTERY))
    if av.any():
        if kind is CellKind.FAT_Y:
            raise OverlapError(
                "artery and vein voxels are facet-adjacent in a FAT_Y cell "
                "(phases must be separated by tissue)"
            )
        lab[av] = Facet.SIGMA
    return lab


def _classify_facets(spec, phases):
    facets = []
    for d in range(spec.dim):
        if spec.periodic[d]:
            left = np.roll(phases, 1, axis=d)  # face k: layers k-1 | k
            lab = _pair_label(left, phases, spec.kind)
            wrap = [slice(None)] * spec.dim
            wrap[d] = 0
            wrap = tuple(wrap)
            same = lab[wrap] == Facet.INTERIOR
            lab[wrap] = np.where(same, Facet.PERIODIC, lab[wrap])
            facets.append(lab)
        else:
            m = phases.shape[d]
            shape = list(phases.shape)
            shape[d] = m + 1
            lab = np.full(shape, Facet.INTERIOR, dtype=np.int8)
            lo = [slice(None)] * spec.dim
            hi = [slice(None)] * spec.dim
            lo[d] = slice(0, m - 1)
            hi[d] = slice(1, m)
            inner = [slice(None)] * spec.dim
            inner[d] = slice(1, m)
            lab[tuple(inner)] = _pair_label(
                phases[tuple(lo)], phases[tuple(hi)], spec.kind
            )
            bot = [slice(None)] * spec.dim
            bot[d] = 0
            top = [slice(None)] * spec.dim
            top[d] = m
            lab[tuple(bot)] = Facet.BOTTOM
            lab[tuple(top)] = Facet.TOP
            facets.append(lab)
    return facets


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class CellMeasures:
    """Dimensionless per-cell volume fractions and surface measures."""

    volume_fraction: dict
    wall_area: dict      # artery/vein wall area against tissue
    sigma_area: float    # artery-vein connection area (skin cells)
    counts: dict

    @property
    def theta(self):
        return self.volume_fraction

    @property
    def gamma(self):
        return self.wall_area


def measure_cell(mask: CellMask) -> CellMeasures:
    """Volume fractions by voxel counting, areas by marching on the SDFs."""
    counts = mask.voxel_counts()
    total = int(np.prod(mask.grid.resolution))
    fa = counts[ARTERY] / total
    fv = counts[VEIN] / total
    fractions = {ARTERY: fa, VEIN: fv, TISSUE: 1.0 - (fa + fv)}

    corners = _grid_points(mask.grid, staggered=False)
    sd = {ph: phase_sdf(mask.spec, ph, corners) for ph in (ARTERY, VEIN)}
    wall = {}
    sigma_total = 0.0
    for ph, other in ((ARTERY, VEIN), (VEIN, ARTERY)):
        area_tissue, area_sigma = _level_set_area(
            sd[ph], sd[other], mask.grid, mask.spec, ph
        )
        wall[ph] = area_tissue
        sigma_total += area_sigma
    # Sigma is one surface seen from both sides; halve the double count.
    return CellMeasures(
        volume_fraction=fractions,
        wall_area=wall,
        sigma_area=0.5 * sigma_total,
        counts=counts,
    )


def _level_set_area(sdf, other_sdf, grid, spec, phase):
    """(wall-against-tissue, wall-against-other-blood) areas of {sdf == 0}."""
    if not np.isfinite(sdf).any() or sdf.min() > 0:
        return 0.0, 0.0
    h = grid.spacing
    if grid.dim == 2:
        contours = _skmeasure.find_contours(sdf, 0.0)
        wall = sigma = 0.0
        for c in contours:
            phys = c * np.asarray(h)
            seg = np.diff(phys, axis=0)
            lengths = np.sqrt((seg ** 2).sum(axis=1))
            mids = 0.5 * (phys[:-1] + phys[1:])
            inside_other = _sample_sdf(spec, _other_phase(phase), mids) < 0.0
            sigma += lengths[inside_other].sum()
            wall += lengths[~inside_other].sum()
        return wall, sigma
    verts, faces, _, _ = _skmeasure.marching_cubes(sdf, 0.0, spacing=h)
    tri = verts[faces]
    centroids = tri.mean(axis=1)
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.sqrt((cross ** 2).sum(axis=1))
    inside_other = _sample_sdf(spec, _other_phase(phase), centroids) < 0.0
    return float(areas[~inside_other].sum()), float(areas[inside_other].sum())


def _other_phase(phase):
    return VEIN if phase == ARTERY else ARTERY


def _sample_sdf(spec, phase, points):
    return phase_sdf(spec, phase, np.asarray(points))


# ---------------------------------------------------------------------------
# connectivity


def validate_connectivity(mask: CellMask, phase, direction: int) -> bool:
    """True iff ``phase`` percolates across the cell along ``direction``.

    Face-adjacency (6-connectivity in 3D, 4 in 2D).  On a periodic axis this
    detects paths with nonzero winding number, so channels that cross the
    wrap boundary off-center are handled correctly.  On the non-periodic
    vertical axis of a SKIN_Z1 cell it instead checks for a connected path
    between the bottom and top voxel layers.
    """
    sel = mask.phase_mask(phase)
    if not sel.any():
        return False
    dim = mask.dim
    res = mask.grid.resolution
    idx = np.full(res, -1, dtype=np.int64)
    idx[sel] = np.arange(int(sel.sum()))

    rows, cols = [], []
    for d in range(dim):
        # interior adjacencies (no wrap in any axis here)
        lo = [slice(None)] * dim
        hi = [slice(None)] * dim
        lo[d] = slice(0, res[d] - 1)
        hi[d] = slice(1, res[d])
        a = idx[tuple(lo)].ravel()
        b = idx[tuple(hi)].ravel()
        ok = (a >= 0) & (b >= 0)
        rows.append(a[ok])
        cols.append(b[ok])
        # wrap adjacencies in periodic axes other than the probe direction
        if mask.periodic[d] and d != direction:
            first = [slice(None)] * dim
            last = [slice(None)] * dim
            first[d] = 0
            last[d] = res[d] - 1
            a = idx[tuple(last)].ravel()
            b = idx[tuple(first)].ravel()
            ok = (a >= 0) & (b >= 0)
            rows.append(a[ok])
            cols.append(b[ok])
    n = int(sel.sum())
    rows = np.concatenate(rows) if rows else np.array([], dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.array([], dtype=np.int64)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)

    first = [slice(None)] * dim
    last = [slice(None)] * dim
    first[direction] = 0
    last[direction] = res[direction] - 1
    lo_ids = idx[tuple(first)].ravel()
    hi_ids = idx[tuple(last)].ravel()

    if not mask.periodic[direction]:
        lo_comps = set(labels[lo_ids[lo_ids >= 0]])
        hi_comps = set(labels[hi_ids[hi_ids >= 0]])
        return bool(lo_comps & hi_comps)

    # winding test: wrap edges connect the last layer back to the first
    pairs = [(labels[a], labels[b]) for a, b in zip(hi_ids, lo_ids)
             if a >= 0 and b >= 0]
    if not pairs:
        return False
    if any(a == b for a, b in pairs):
        return True
    pot = {}
    adjacency = {}
    for a, b in pairs:
        adjacency.setdefault(a, []).append((b, 1))
        adjacency.setdefault(b, []).append((a, -1))
    for start in adjacency:
        if start in pot:
            continue
        pot[start] = 0
        stack = [start]
        while stack:
            u = stack.pop()
            for v, w in adjacency.get(u, ()):
                if v not in pot:
                    pot[v] = pot[u] + w
                    stack.append(v)
                elif pot[v] != pot[u] + w:
                    return True  # inconsistent potential -> winding cycle
    return False


def require_fluid(mask, phase, directions=(), kind_label=""):
    """Shared precondition used by the cell solvers."""
    if not mask.phase_mask(phase).any():
        raise NoFluidError(f"phase {phase!r} has no voxels {kind_label}")
    for d in directions:
        if not validate_connectivity(mask, phase, d):
            raise DisconnectedFluidError(
                f"phase {phase!r} does not percolate along axis {d}"
            )


# ---------------------------------------------------------------------------
# geometry spec files (documented key-value text format)


def parse_cell_spec(text: str) -> UnitCellSpec:
    """Parse the INI-style geometry description.

    One ``[cell]`` section (kind, dim) and one ``[primitive.<name>]`` section
    per primitive with keys: kind, phase, and the primitive's geometry
    (axis/center/radius for cylinders, lo/hi for boxes, center/radius for
    spheres).  All violations are reported at once.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ParseError(str(exc), line=line) from exc

    problems = []
    if not cp.has_section("cell"):
        raise ValidationError(["missing [cell] section"])
    known_cell = {"kind", "dim"}
    for key in cp["cell"]:
        if key not in known_cell:
            problems.append(f"[cell]: unknown key {key!r}")
    kind_txt = cp["cell"].get("kind", "fat_y")
    try:
        kind = CellKind(kind_txt)
    except ValueError:
        problems.append(f"[cell]: unknown kind {kind_txt!r}")
        kind = CellKind.FAT_Y
    try:
        dim = cp["cell"].getint("dim", 3)
    except ValueError:
        problems.append("[cell]: dim must be an integer")
        dim = 3

    prims = []
    for sec in cp.sections():
        if sec == "cell":
            continue
        if not sec.startswith("primitive."):
            problems.append(f"unknown section [{sec}]")
            continue
        prim, probs = _parse_primitive(cp[sec], sec, dim)
        problems.extend(probs)
        if prim is not None:
            prims.append(prim)
    if problems:
        raise ValidationError(problems)
    spec = UnitCellSpec(kind=kind, dim=dim, primitives=tuple(prims))
    spec.validate()
    return spec


_PRIM_KEYS = {
    "cylinder": {"kind", "phase", "axis", "center", "radius"},
    "box": {"kind", "phase", "lo", "hi"},
    "sphere": {"kind", "phase", "center", "radius"},
}


def _parse_primitive(sec, name, dim):
    problems = []
    pkind = sec.get("kind", "")
    if pkind not in PRIMITIVE_KINDS:
        return None, [f"[{name}]: unknown primitive kind {pkind!r}"]
    for key in sec:
        if key not in _PRIM_KEYS[pkind]:
            problems.append(f"[{name}]: unknown key {key!r}")
    phase_txt = sec.get("phase", "")
    phase = {"artery": ARTERY, "vein": VEIN}.get(phase_txt)
    if phase is None:
        problems.append(f"[{name}]: phase must be artery or vein, got {phase_txt!r}")
        phase = ARTERY

    def vec(key):
        try:
            v = tuple(float(t) for t in sec.get(key, "").split())
        except ValueError:
            problems.append(f"[{name}]: {key} must be {dim} floats")
            return (0.0,) * dim
        if len(v) != dim:
            problems.append(f"[{name}]: {key} must have {dim} entries")
            return (0.0,) * dim
        return v

    try:
        if pkind == "cylinder":
            prim = Cylinder(axis=sec.getint("axis", 0), center=vec("center"),
                            radius=sec.getfloat("radius", 0.0), phase=phase)
        elif pkind == "box":
            prim = Box(lo=vec("lo"), hi=vec("hi"), phase=phase)
        else:
            prim = Sphere(center=vec("center"),
                          radius=sec.getfloat("radius", 0.0), phase=phase)
    except ValueError as exc:
        problems.append(f"[{name}]: {exc}")
        return None, problems
    return prim, problems


def serialize_cell_spec(spec: UnitCellSpec) -> str:
    """Canonical text form; parse_cell_spec(serialize_cell_spec(s)) == s."""
    out = io.StringIO()
    out.write(f"[cell]\nkind = {spec.kind.value}\ndim = {spec.dim}\n")
    for i, p in enumerate(spec.primitives):
        out.write(f"\n[primitive.p{i}]\n")
        phase = PHASE_NAMES[p.phase]
        if isinstance(p, Cylinder):
            center = " ".join(repr(c) for c in p.center)
            out.write(f"kind = cylinder\nphase = {phase}\naxis = {p.axis}\n"
                      f"center = {center}\nradius = {p.radius!r}\n")
        elif isinstance(p, Box):
            lo = " ".join(repr(c) for c in p.lo)
            hi = " ".join(repr(c) for c in p.hi)
            out.write(f"kind = box\nphase = {phase}\nlo = {lo}\nhi = {hi}\n")
        else:
            center = " ".join(repr(c) for c in p.center)
            out.write(f"kind = sphere\nphase = {phase}\n"
                      f"center = {center}\nradius = {p.radius!r}\n")
    return out.getvalue()
