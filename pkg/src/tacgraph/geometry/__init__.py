from .mesh import (
    DegenerateFace,
    MeshError,
    NonWatertight,
    ParseError,
    PointCloud,
    SdfResult,
    TriangleMesh,
    batch_signed_distance,
    load_mesh,
    parse_obj,
    sample_surface,
    signed_distance,
    write_obj,
)

__all__ = [
    "DegenerateFace",
    "MeshError",
    "NonWatertight",
    "ParseError",
    "PointCloud",
    "SdfResult",
    "TriangleMesh",
    "batch_signed_distance",
    "load_mesh",
    "parse_obj",
    "sample_surface",
    "signed_distance",
    "write_obj",
]
