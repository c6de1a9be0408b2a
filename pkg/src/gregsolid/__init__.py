"""Gregory-solid volume parameterization of polyhedral-domain models."""

__version__ = "0.1.0"

from .domain import (  # noqa: E402
    SHAPES,
    HexGrid,
    PolyhedralDomain,
    build_domain,
    corner_coordinates,
    corner_weights,
    generate_parametric_grid,
)
from .errors import DomainError, FittingError, GregSolidError, IngestionError, NumericError  # noqa: E402
from .gregory import GregorySolid, eval_solid, map_grid, pack_variables, unpack_variables  # noqa: E402
from .modelio import Model, load_model, save_model, synth_model  # noqa: E402
from .optimize import SolverConfig, admm_solve  # noqa: E402
from .quality import jacobian_vector, quality_report  # noqa: E402
from .vtk import export_vtk  # noqa: E402

__all__ = [
    "SHAPES",
    "HexGrid",
    "PolyhedralDomain",
    "build_domain",
    "corner_coordinates",
    "corner_weights",
    "generate_parametric_grid",
    "DomainError",
    "FittingError",
    "GregSolidError",
    "IngestionError",
    "NumericError",
    "GregorySolid",
    "eval_solid",
    "map_grid",
    "pack_variables",
    "unpack_variables",
    "Model",
    "load_model",
    "save_model",
    "synth_model",
    "SolverConfig",
    "admm_solve",
    "jacobian_vector",
    "quality_report",
    "export_vtk",
]
