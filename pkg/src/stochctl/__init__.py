"""Controllability of conservative systems via a tempered auxiliary SDE.

Symbolic vector fields and assumption checks (``geometry``), the auxiliary
SDE and its integrator (``auxsde``), the invariant density and stationarity
diagnostics (``measure``), steering by hitting paths (``control``) and the
example systems (``models``).
"""

__version__ = "0.1.0"

from .auxsde import GFamily, NoiseRecord, SdeSystem, Trajectory, build_sde, energy_bound_check, integrate
from .control import ControlSignal, TargetSet, extract_control, find_hitting_path, replay_euler, steer, verify_control
from .geometry import (
    ModelSpec,
    VectorField,
    check_conserved,
    check_divergence_free,
    check_level_set_growth,
    hormander_rank,
    lie_bracket,
)
from .measure import InvariantDensity, adjoint_generator_residual, kernel_overlap, stationarity_test
from .models import (
    ChainSpec,
    EulerTruncationSpec,
    build_chain,
    build_euler_galerkin,
    build_gaussian_1d,
    build_harmonic_pair,
    build_slow,
    build_trap,
    load_model,
    save_model,
    trap_certificate,
)
