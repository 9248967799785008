"""Bipartite holder-fund recommendations via graph representation learning.

The package builds a holder-fund graph from quarterly holdings data,
engineers money-weighted one-hot node features, trains a neighborhood
aggregating encoder jointly with an MLP edge scorer, and evaluates ranked
holder recommendations against next-quarter ground truth, next to a
cosine content-similarity baseline.
"""

from . import autodiff
from .baseline import (SegmentQuota, baseline_recommend, cosine_similarity,
                       diversity_constrain)
from .checkpoint import (Checkpoint, CheckpointError, checkpoint_from_model,
                         load_checkpoint, model_from_checkpoint, save_checkpoint)
from .evaluation import (EvalReport, GroundTruth, auc, evaluate, hits_at_k,
                         newly_added_split)
from .features import (AumSegmentation, ColumnScaler, FeatureMatrix, FeatureSchema,
                       Position, QuarterSnapshot, build_schema, featurize,
                       min_max_scale, parse_holdings, quarter_key, segment_holders)
from .gradcheck import run_gradcheck
from .graph import (BipartiteGraph, EdgeSplit, LabeledEdge, NodeKind, NodeRef,
                    build_graph, neighbors, sample_negative_edges, split_edges)
from .optim import AdamState, ParamStore, adam_step, init_params
from .pipeline import (BaselineRecommender, ModelRecommender, QueryData,
                       baseline_for_query, build_query_from, fit_quarter,
                       graph_from_snapshot, ground_truth, query_for_model)
from .predictor import (MlpPredictor, TrainConfig, TrainedModel, bce_loss,
                        recommend_holders, score_edge, score_edges, train)
from .sage import (AggregatorKind, Embeddings, SageLayer, SageModel, aggregate,
                   create_sage, encode)
from .synthetic import SyntheticConfig, generate_synthetic, write_holdings_csv

__version__ = "0.1.0"
