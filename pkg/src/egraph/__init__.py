"""Knowledge-graph-guided classifier heads over precomputed feature vectors.

The package couples a dynamically maintained local prototype graph with a
fixed global semantic graph: query features are aggregated through the local
graph, scored by cosine softmax against the global node embeddings, and the
local adjacency is pulled toward the global one by a correlation-alignment
objective.  Baseline heads (a learned linear projection and a plain linear
classifier) share the same estimator API, and a harness evaluates all of
them under few-shot, cross-domain, zero-shot, and open-set protocols.
"""

from .autodiff import GradCheckReport, Tape, Var, gradcheck
from .config import RunConfig, substream
from .datasets import (
    DatasetSplit,
    Episode,
    EpisodeSpec,
    SyntheticSpec,
    generate_synthetic,
    load_features,
    sample_episode,
    sample_episodes,
    save_features,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateVectorError,
    DimensionError,
    EGraphError,
    FormatError,
    GraphError,
    NumericError,
    ParameterError,
    StateError,
)
from .estimators import (
    EGLayerClassifier,
    EGLayerSnapshot,
    LinearHeadSnapshot,
    LinearSoftmaxClassifier,
    LPLayerClassifier,
    LPLayerSnapshot,
    make_head,
)
from .evaluation import (
    OUTLIER,
    cross_domain_eval,
    fewshot_eval,
    mean_ci95,
    open_set_classify,
    open_set_eval,
    prototype_eval,
    zero_shot_eval,
)
from .knowledge import (
    GlobalGraph,
    WordEmbeddingTable,
    build_global_graph,
    commonality,
    gaussian_affinity,
    load_embeddings,
    top_k_edges,
)
from .layer import (
    EGLayerParams,
    LayerConfig,
    LinearHeadParams,
    LossWeights,
    LPLayerParams,
    TrainStepResult,
    ablation_losses,
    alignment_loss,
    amend_adjacency,
    cosine_regularizer,
    cosine_softmax,
    cross_entropy,
    full_layer_gradcheck,
    gcn_aggregate,
    linear_forward,
    lp_forward,
    total_loss,
    train_step,
)
from .prototypes import (
    LocalAssembly,
    PrototypeBank,
    assemble_local,
    batch_class_means,
    ema_update,
    local_adjacency,
    query_adjacency,
)

__version__ = "0.1.0"
