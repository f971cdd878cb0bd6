"""2D EIT with the complete electrode model and edge-preserving reconstruction."""

from .cem import (
    CemError,
    CemOperator,
    CurrentJacobian,
    ExcitationSet,
    ForwardSolution,
    assemble_system,
    check_scaling_theorem,
    current_jacobian,
    fit_homogeneous,
    masked_currents,
    solve_forward,
    voltage_excitations,
)
from .mesh import (
    Mesh,
    MeshError,
    generate_disk_mesh,
    interpolate_field,
    load_mesh,
    locate_points,
    refine_mesh,
    save_mesh,
    scale_mesh,
)
from .metrics import (
    ColorScale,
    HwhmAreas,
    default_color_scale,
    hwhm_areas,
    lumped_node_areas,
    read_field_csv,
    relative_error,
    render_field,
    write_field_csv,
)
from .optimize import (
    OptimizeError,
    PdpsParams,
    ReconstructionResult,
    Regularizer,
    RipgnParams,
    linearize_data_term,
    objective_eval,
    pdps_solve,
    pdps_solve_smooth,
    pdps_solve_tv,
    ripgn_run,
    write_trace_csv,
)
from .phantoms import (
    Inclusion,
    MeasurementSet,
    Phantom,
    PhantomError,
    add_inclusion,
    build_weights,
    injection_mask,
    load_measurements,
    realize_phantom,
    sample_grf,
    save_measurements,
    simulate_measurements,
)
from .regularizers import (
    ATParams,
    BoxConstraints,
    eval_F_grad,
    eval_F_lambda,
    eval_TV,
    grad_operator,
    k2_apply,
    k2_jacobian,
    prox_F1_conj,
    prox_F2_conj,
    prox_H,
    tv_dual_project,
    tv_operator,
)

__all__ = [name for name in dir() if not name.startswith("_")]
