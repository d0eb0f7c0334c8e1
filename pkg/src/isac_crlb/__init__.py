"""Error-bound analysis and sequential beamformer design for joint
round-trip sensing and downlink positioning in mobile MIMO-OFDM systems."""

__version__ = "0.1.0"

from .fisher import (BoundReport, ChannelFimAssembler, FimMatrix, IndexMap,
                     JacobianMatrix, StageInformation, bp_jacobian,
                     channel_fim, crb_extract, marginalize_nuisance,
                     ms_jacobian, position_fim, strided_subcarriers)
from .optimizer import (OptimizationOutcome, SolverConfig, codebook,
                        illumination_energies, project_power, solve_greedy_fms,
                        solve_p1, solve_p2_separate, solve_p3_shared,
                        synthesize_beamformer, uniform_beamformer)
from .scenario import (SPEED_OF_LIGHT, BpChannelParams, MsChannelParams,
                       NoiseModel, Scenario, ThresholdSet, coherence_time,
                       derive_bp_params, derive_ms_params, effective_slots,
                       full_symbol_grid, symbol_start_time)
from .sequential import (AllocationPolicy, SequentialEvaluator,
                         SequentialResult, feedback_cost, loss, ms_stage_loss,
                         partition_symbols, posterior_fim)
from .signal_model import (Beamformer, Combiner, bp_channel, ms_channel,
                           noiseless_obs, steering_derivative, steering_vector)
from .velocity import (TwoEpochConfig, doppler_information, extended_ms_veb,
                       snapshot_ms_veb, velocity_fim_from_doppler)
from .experiments import (ExperimentConfig, RunRecord, aggregate,
                          desk_scenario, full_scale_scenario, run_experiment,
                          sample_scenario)
