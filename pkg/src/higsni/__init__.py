"""Negative-imaginary plants under hybrid integrator-gain control."""

from .errors import *  # noqa: F401,F403
from .numerics import DEFAULT_TOL, Tolerances
from .plant import (PlantModel, NiCertificate, NiVerdict, dc_gain,
                    freq_response, ni_frequency_test, ni_hamiltonian_test,
                    find_ni_certificate, certify, second_order_plant)
from .higs import (HigsMode, HigsParams, HigsElement, MultiHigs, CascadeHigs,
                   classify_mode, higs_rate, storage_single, storage_multi,
                   storage_cascade, sector_residual, dissipation_residual,
                   controller_from_dict, controller_to_dict)
from .closedloop import (Wiring, InputSignal, SplineSignal, SimConfig,
                         Trajectory, SimReport, assemble, simulate,
                         lyapunov_value, monitor_report, write_trajectory_csv)
from .synthesis import (SynthesisRequest, synthesize, synthesize_single,
                        synthesize_multi, synthesize_cascade)
from .analysis import (DescribingPoint, describing_function, step_metrics)

__version__ = '0.1.0'
