"""Magnetic geodesic flows on conformally flat tori.

The package integrates twisted and gauged flows and detects conjugate points
through Jacobi fields or the Riccati equation. Level-set averages are
computed by spectral quadrature.
"""

from .averaging import (GridTooCoarse, QuadratureGrid, gauge_invariance_check, odd_integrand_check, sigma_closed_form,
                        sigma_direct, sigma_half_gradient_form, sigma_report, total_mass)
from .dynamics import (PhasePoint, Trajectory, gauged_vector_field, integrate, normalize_energy,
                       read_trajectory_csv, twisted_vector_field, write_trajectory_csv)
from .errors import (ConfigInvalid, DetectorAmbiguous, FrameSingular, InvalidInitial, MagtorusError, ModelError,
                     NoneFound, NotClosed, StepSizeCollapse, ZeroVelocity)
from .model import (ConformalFactor, GaugeData, MagneticModel, TwoForm, check_closed, constant_field_model, decompose,
                    exterior_derivative, hamiltonian, hamiltonian_blocks)
from .modelio import load_model, model_hash, save_model
from .trigpoly import TrigPoly
from .variational import (ConjugateReport, first_conjugate_time, green_limit, propagate_riccati, propagate_vertical,
                          scan_conjugate)

__version__ = "0.1.0"
