"""Densified sparse representations for passage retrieval.

Sparse term-weight vectors are cut into slices; each slice keeps its largest
weight and that weight's position. Documents are scored with the gated inner
product, optionally in a threshold-then-rerank pipeline and fused with a
conventional dense vector.
"""

from .core import (
    DenseVector,
    DsrVector,
    ParseError,
    SparseVector,
    ValidationError,
    exact_sparse_dot,
    parse_dense_collection,
    parse_dsr_collection,
    parse_sparse_collection,
)
from .eval import Qrels, mrr_at_k, ndcg_at_k, read_qrels, recall_at_k
from .index import (
    DenseIndex,
    DsrIndex,
    IndexFormatError,
    build_dense_index,
    build_dsr_index,
    load_dense_index,
    load_index,
    predict_storage,
    save_dense_index,
    save_index,
)
from .kernels import BACKEND
from .scoring import (
    FingerprintMismatch,
    ScoreBreakdown,
    count_ops,
    fused_score,
    gip,
    gip_partial,
)
from .search import (
    RankedList,
    SearchParams,
    search_exhaustive,
    search_fused,
    search_two_stage,
    theta_sweep,
    write_run,
)
from .slicing import (
    PRESETS,
    SliceAssignment,
    SlicingConfig,
    Strategy,
    build_assignment,
    densify,
    undensify_term,
)

__version__ = "0.1.0"
