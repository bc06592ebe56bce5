"""cnnscope: look inside small convolutional classifiers.

Three families of tools over one trained model:

* synthesis: gradient ascent on pixels toward class/layer/filter objectives,
  with alpha-norm and total-variation regularizers and gradient jitter
  (cnnscope.maximize);
* attribution: gradient-weighted class heatmaps, difference heatmaps,
  fooling robustness, top-k activating images, score histograms and the
  out-of-sample prediction table (cnnscope.attribution);
* structure: a category hierarchy plus MST over feature-space distances,
  and per-category filter-wise prediction trees (cnnscope.hierarchy,
  cnnscope.filter_tree).

Everything runs on a self-contained float64 tensor engine with taped
reverse-mode differentiation (cnnscope.tensor) and a small residual
classifier trained from scratch (cnnscope.model).
"""

from .data import (
    CIFAR10_CLASSES,
    DatasetStats,
    LabeledImage,
    compute_stats,
    gaussian_noise_images,
    load_cifar10,
    normalize,
    subset,
)
from .model import (
    Hyper,
    LayerAddress,
    Model,
    ModelSpec,
    StageSpec,
    TrainingReport,
    build_model,
    default_spec,
    evaluate,
    forward,
    forward_with_activations,
    load_weights,
    save_weights,
    train,
)
from .maximize import (
    AscentConfig,
    AscentTrace,
    JitterConfig,
    Objective,
    RegularizerConfig,
    ascend,
    class_logit,
    class_prob,
    combine,
    evaluate_objective,
    filter_mean,
    layer_mean,
    regularizer_alpha,
    regularizer_tv,
)
from .attribution import (
    Heatmap,
    OOSTable,
    RobustnessReport,
    activation_histogram,
    diff_heatmap,
    grad_cam,
    oos_table,
    robustness,
    top_k_activating,
)
from .hierarchy import (
    CategoryGraph,
    HierarchyTree,
    RepresentativeVector,
    build_hierarchy,
    category_graph,
    cosine_distance,
    emit_tree_dot,
    minimum_spanning_tree,
    representative_vectors,
)
from .filter_tree import (
    FeatureNode,
    PredictionTree,
    annotate_tree,
    build_prediction_tree,
    critical_filter,
    masked_cosine,
    query_path,
)
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"
