"""Leader-following consensus with continuous-discrete observers over directed graphs."""
from .bounds import (BoundReport, InitialErrors, Lemma2Params, TuningParams, certified_params,
                     check_monotonicity, lemma2_bound, theorem_bounds)
from .errors import (ConfigInvalid, ConsensusError, DeltaTooLarge, DimensionError,
                     InvalidCertificate, MissingEstimate, NoConvergence, NotMMatrix,
                     NumericalBlowup, OutOfOrderSample, SolveFailed)
from .gains import GainSet, ScalingMatrices, residuals, scaling, solve_p, solve_q, synthesize
from .model import (BlockStructure, ChainMatrices, DisturbanceSpec, NoiseModel, NonlinearField,
                    build_chain_matrices, chua_nonlinear_field, estimate_lipschitz, zero_field)
from .protocol import ObserverState, ProtocolConfig, control_input, on_sample
from .simulator import (Metrics, ScenarioConfig, SimTrace, generate_schedules, metrics, run,
                        steady_mean_error)
from .topology import OmegaCertificate, Topology, compute_omega, ten_agent_topology, h_matrix

__version__ = "0.1.0"
