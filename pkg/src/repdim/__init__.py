"""Intrinsic dimension of point clouds and of neural-network layer representations."""

from .data import (
    LabeledDataset,
    PointCloud,
    generate_class_manifolds,
    generate_hypercube,
    generate_hypersphere,
    generate_swiss_roll,
    load_csv,
    load_idx_images,
    load_idx_labels,
    split_by_class,
)
from .errors import (
    DataFormatError,
    DegenerateDataError,
    EstimationError,
    RepdimError,
    TrainingError,
    UsageError,
)
from .global_id import estimate_global_id, hypersphere_reference
from .local_id import IdEstimate, estimate_local_id, nn_ratios
from .neighbors import NeighborTable, geodesics_all_pairs, knn, knn_graph, largest_component
from .nn import MlpModel, TrainConfig, build_mlp, extract_activations, train
from .probe import ProbeReport, detect_phases, probe_layers, relu_expansion_ratios
from .theory import TwoLayerProblem, closed_form_w1, effective_loss

__version__ = "0.1.0"
