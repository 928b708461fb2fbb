"""LP-based jigsaw puzzle solver and benchmark harness."""

from .core import (
    Assembly,
    Piece,
    Placement,
    PuzzleSpec,
    offsets,
    rotate_orientation,
    rotate_piece,
)
from .ingest import (
    PuzzleBundle,
    add_noise,
    load_bundle,
    load_image,
    save_bundle,
    save_image,
    scramble_type2,
    slice_image,
)
from .compat import (
    DistanceTable,
    OrientedMatch,
    WeightTable,
    active_set,
    build_distance_table,
    build_weights,
    full_universe,
    mgc_distance,
)
from .lpsolve import (
    CollapsedProblem,
    PlacementProblem,
    PlacementSolution,
    collapse,
    oracle_solve,
    solve_axis,
)
from .assembly import (
    Component,
    SolverState,
    VariantConfig,
    component_extraction,
    reject_matches,
    solve_bundle,
    solve_type1,
    solve_type2,
)
from .postprocess import best_window, snap_to_grid, stitch, trim_and_fill
from .metrics import (
    ScoreReport,
    direct_score,
    largest_component_score,
    neighbor_score,
    perfect_score,
    score_assembly,
)
from . import synthetic

__version__ = "0.1.0"
