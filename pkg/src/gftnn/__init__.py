"""Graph-spectral trajectory prediction for highway traffic."""

from .graph import (D_FLOOR, Graph, Laplacian, apply_inverse_distance_weights,
                    build_line_graph, build_mesh_graph, build_spider_graph,
                    cartesian_product, from_adjacency, laplacian)
from .spectral import (ProductBasis, Spectrum, eigendecompose, gft_2d,
                       gft_extended, inverse_gft, symmetric_eigh,
                       truncate_spectrum)
from .scenario import (MANEUVERS, BalanceError, DatasetSplit, ParseError,
                       RawTrack, Scenario, SchemaError, SplitError, balance,
                       extract_scenarios, ingest_tracks, label_maneuver,
                       load_archive, save_archive, split, synthesize)
from .model import (PRESETS, Checkpoint, ModelConfig, ModelParams, Trajectory,
                    build_basis, decode, decode_partials, encode, gelu,
                    gelu_grad, init_params, layer_norm, load_checkpoint,
                    mlp_block, predict, preset_config, save_checkpoint,
                    scenario_spectrum, select_channels, spectral_gate,
                    truth_trajectory)
from .training import (AdamState, DivergenceError, NumericError, TrainConfig,
                       TrainResult, adam_step, gradients, train,
                       trajectory_loss)
from .metrics import (EvalReport, ade, ade_euclid_mean, evaluate, fde,
                      histogram, histogram_mode, per_scenario_ade)

__version__ = "0.1.0"
