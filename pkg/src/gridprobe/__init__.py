"""Grid probing toolkit: simulate smart-inverter probing of radial feeders and
recover topology or verify line statuses from the voltage response."""

from .bench import MetricsReport, Scenario, export_report, run_identification, run_verification
from .errors import (FeederError, GridProbeError, ParseError, ReconstructionError,
                     SolverError, StructureError)
from .feeder import (Feeder, Line, RecoveredTree, SensitivityModel, ac_voltage,
                     build_sensitivity, full_laplacian, incidence, lindistflow_voltage,
                     reduced_laplacian, resistance_matrix, resistance_matrix_pathsum)
from .feeder_io import feeder_to_text, load_feeder, parse_feeder_text
from .fixtures import fixture_path, load_fixture
from .identify import (AdmmState, IdentifyResult, MleResult, PriorMask, admm_identify,
                       is_admissible_laplacian, kkt_residual, mle_identify,
                       project_offdiag_nonpositive, project_rowsums_nonnegative,
                       round_to_tree, sylvester_solve)
from .probing import (NoiseConfig, ProbingDataset, ProbingPlan, blue_weight,
                      load_dataset, make_plan, save_dataset, simulate)
from .recovery import (check_distinct_resistances, check_verifiable,
                       level_sets_from_column, recover_tree)
from .trees import (LevelSetIndex, TreeGraph, build_index, level_set, level_sets,
                    minimum_spanning_tree)
from .verify import (ExhaustiveResult, PgdResult, VerifyProblem, enumerate_tree_statuses,
                     exhaustive_verify, pgd_verify, project_capped_simplex, round_status)

__version__ = "0.1.0"
