"""Diffusive molecular communication with steady uniform flow."""

__version__ = "0.1.0"

from .dimensionless import (DimensionlessEnv, PhysicalEnv, load_env, table_one_env,
                            to_dimensional_time, to_dimensionless, to_dimensionless_time)
from .signal import (QuadratureSpec, SignalProfile, build_signal_profile, closed_form_parallel,
                     expected_count_exact, expected_count_quadrature, expected_count_uca,
                     mean_observed, point_concentration, uca_relative_deviation)
from .channel import (ObservationMatrix, ParticleState, SamplingSchedule, draw_sequence,
                      observe_particles, particle_step, simulate_particle, simulate_statistical)
from .detectors import (BerReport, DecisionRule, SequenceDetectorConfig, WeightVector,
                        estimate_ber, matched_weights, optimize_threshold,
                        viterbi_sequence_detect, weighted_sum_decide)

__all__ = [
    "BerReport", "DecisionRule", "DimensionlessEnv", "ObservationMatrix", "ParticleState",
    "PhysicalEnv", "QuadratureSpec", "SamplingSchedule", "SequenceDetectorConfig",
    "SignalProfile", "WeightVector", "build_signal_profile", "closed_form_parallel",
    "draw_sequence", "estimate_ber", "expected_count_exact", "expected_count_quadrature",
    "expected_count_uca", "load_env", "matched_weights", "mean_observed", "observe_particles",
    "optimize_threshold", "particle_step", "point_concentration", "simulate_particle",
    "simulate_statistical", "table_one_env", "to_dimensional_time", "to_dimensionless",
    "to_dimensionless_time", "uca_relative_deviation", "viterbi_sequence_detect",
    "weighted_sum_decide",
]
