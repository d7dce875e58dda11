"""Prior-informed flow matching for graph reconstruction.

A library and CLI for reconstructing graphs from partial observations:
local edge-probability priors (node2vec, GraphSAGE-style, histogram
graphons) provide an informed source state, and a rectified flow learns the
global coupling that transports it to the clean-graph distribution.
"""

from .graphs import (AdjacencyState, DimensionError, GraphRecord, NodePermutation,
                     ObservationMask, hidden_entries, permute, symmetrize_clip)
from .data import (DatasetSplit, GraphonGrid, TaskSpec, make_task_input,
                   parse_tu_dataset, sample_graphon_graph, split_dataset,
                   synthetic_graphon, write_tu_dataset)
from .flow import (FlowConfig, FlowSample, VelocityNet, build_A0, euler_sample,
                   interpolate, log_density, mse_distortion, train_flow,
                   velocity_forward)
from .metrics import (MetricsReport, auc, average_precision, confusion_rates,
                      graph_statistics, mmd2, threshold_adjacency)
from .priors import (EdgeLogisticModel, GaussianPrior, GraphonPrior, Node2VecPrior,
                     SagePrior, canonicalize, estimate_histogram_graphon,
                     fit_edge_classifier, load_prior, make_prior, prior_predict,
                     random_walks, train_sgns)

__version__ = "0.1.0"
