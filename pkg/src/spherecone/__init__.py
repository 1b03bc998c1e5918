"""Spherical surfaces with conical points: geometry, Voronoi function, systole and monodromy."""
from .cone_surface import (ConeSurface, appendix_family, bigon_glue, double_polygon, double_triangle,
                           lune_double, mark_smooth_point_on_edge, octant_double, standard_disk, subdivide)
from .conformal_bounds import (ModulusBracket, annulus_modulus, appendix_ext_bracket, modulus_height_bound,
                               strebel_extremal_length, subadditivity_check, theorem_d_threshold)
from .errors import *  # noqa: F401,F403
from .geodesics import build_field, single_source_field
from .harness import Report, Scenario, analyze, build_family, emit_report, pigeonhole_delta, run_systole_inequality
from .monodromy_nb import (dist_to_odd_lattice, geodesic_loop_monodromy_bound, half_integer_distance_constraint,
                           holonomy_along, is_coaxial, nb_parameter, rot_number_gap_checks, standard_set)
from .systole import closest_point_checks, compute_systole, essential_curve_bound
from .voronoi import epsilon_bubbling, extract_complex

__version__ = "0.1.0"
