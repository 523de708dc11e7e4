"""Light graph convolution feeding a SLIM-style item-similarity recommender."""

from .dataset import (InteractionDataset, RawInteraction, SplitBundle, SyntheticSkewConfig,
                      build_dataset, generate_synthetic, kcore_filter, load_movielens,
                      sample_negatives, split)
from .evaluation import MetricsReport, evaluate, ndcg_at_n, rank_topn, recall_at_n
from .graph import build_normalized_adjacency, combine_layers, propagate
from .model import (ModelConfig, batch_loss, cold_score, final_embeddings, item_similarity,
                    predict_full, score_pair_mf, score_pair_slim, user_similarity_predict,
                    variant_config)
from .trainer import AdamState, TrainConfig, TrainReport, fit, grad_check, init_params

__version__ = "0.1.0"
