"""microcirc: homogenized blood flow and oxygen transport in vascular tissue.

Pipeline: voxelize a periodic vascular unit cell (`geometry`), solve its
Stokes and diffusion cell problems (`stokes`, `diffusion`) to obtain
effective permeability and diffusion tensors, feed those into the coupled
bulk/surface Darcy solver (`darcy`) and the oxygen transport stepper
(`oxygen`), and validate against a resolved-microstructure reference solver
(`micro`).
"""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    ARTERY,
    ARTERY_VEIN,
    TISSUE,
    VEIN,
    Box,
    CellKind,
    CellMask,
    CellMeasures,
    Cylinder,
    GridSpec,
    Sphere,
    UnitCellSpec,
    build_mask,
    measure_cell,
    validate_connectivity,
)
