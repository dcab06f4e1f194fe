"""2D and 2.5D FDTD simulation of vocal tract tubes."""

from .analysis import FormantSet, TransferFunction, extract_formants, positional_error, transfer_function
from .excitation import ExcitationSignal, make_band_passed_pulse
from .geometry import (
    AreaFunction,
    CellKind,
    GridGeometry,
    Termination,
    add_radiation_domain,
    area_to_diameter,
    build_geometry,
    compute_domain_size,
    load_area_function,
    rasterize_tube,
    sample_depths,
)
from .solver import (
    PhysicalConstants,
    PressureTrace,
    SimulationConfig,
    SolverKind,
    YeeGrid,
    cfl_timestep,
    run_simulation,
    step_pml,
    step_pressure,
    step_velocity,
    wall_impedance,
    wall_velocity,
)

__version__ = "0.1.0"
