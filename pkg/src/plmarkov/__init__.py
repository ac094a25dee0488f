"""Piecewise-linear Markov interval maps: partitions, cylinders, transfer operators,
countable-chain analysis and Monte Carlo experiments."""

from .interval_map import (
    BOUNDARY,
    CustomMap,
    DomainError,
    Savior,
    Schweitzer,
    cell_data,
    cell_of,
    ell,
    eval_map,
    load_map,
    map_from_spec,
    validate_partition,
)
from .bugiel import bugiel_u_r
from .chain import (
    classify,
    closed_form_candidate,
    first_passage_probs,
    invariant_union_search,
    mean_return_time,
    period_of,
    power_limit,
    stationary_truncated,
    verify_stationary_candidate,
)
from .closed_form import closed_form_p, closed_form_q, tables
from .symbolic import BoundaryHit, cylinder, expansivity_probe, itinerary, symbolic_distance
from .transfer import (
    CylinderCombination,
    PiecewiseConstantDensity,
    iterate_to_invariant,
    l1_distance,
    pointwise_pf,
    push_cylinders,
    push_pc_density,
    transition_row,
    truncate,
)

__version__ = "0.1.0"
