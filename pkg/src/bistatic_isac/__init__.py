"""Rate-splitting uplink bistatic OFDM ISAC: link simulation and power allocation."""

from .channel import (ChannelRealization, EchoPath, OfdmGrid, ScenarioGeometry,
                      bistatic_delay, bistatic_echo_gain, dirichlet_leakage,
                      dp_channel_realization, ep_coefficient,
                      fd_effective_channel_oracle, leakage_matrix, make_echo,
                      residual_doppler)
from .receiver import (PowerAllocation, SinrBreakdown, mismatch_power,
                       robust_stream_sinr, sensing_sinr,
                       sum_spectral_efficiency, supplementary_stream_sinr)
from .sensing import (FimKernels, FisherState, SensingWeights, end_to_end_sigma,
                      evaluate_chain, fim_from_sinr, omega,
                      reconstruction_error_variance, weighted_crlb)
from .cone_program import Cone, ConeProgram, ConeSolution, kkt_residuals
from .cone_solver import solve as solve_cone_program
from .optimizer import (BcdTrace, FpAuxiliaries, OptimizerConfig,
                        SurrogateState, bcd_solve, noma_cf_solve,
                        noma_sf_solve)
from .harness import (ExperimentConfig, ResultRow, convergence_trace,
                      emit_plot_data, run_point, sensing_tightness_study,
                      sweep_delta_g)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
