"""Monte Carlo wave-function simulation of open quantum systems.

Trajectory engines with jump-probability step control, a norm-threshold
engine, a direct master-equation solver and a birth-death chain oracle.
"""

from .ensemble import (EnsembleStatistics, critical_dp, deviation, predicted_mean_dt,
                       run_ensemble, time_average)
from .errors import (ContractError, DegenerateStateError, DimensionMismatchError,
                     EnsembleFailure, InvalidDimensionError, InvalidTransitionError,
                     MCWFError, NumericError, PictureOverflowError, StiffnessError,
                     TruncationError, UndefinedMetricError, ValidationError)
from .hilbert import (Operator, annihilation, coherent_state, creation, density_matrix,
                      expectation, fock, identity, normalize, number)
from .integrating import IntegratingControls, find_jump_time, run_trajectory_integrating
from .master import check_density_matrix, evolve_master, lindblad_rhs
from .models import (ModeParams, ParticleParams, QuantumSystem, make_mode_system,
                     make_particle_system)
from .ode import StepControl, ck_step, integrate
from .rng import PhiloxStream, new_stream
from .stepwise import DpControls, advance, diad_average, run_trajectory
from .timeseries import TimeSeries

__version__ = "0.1.0"
