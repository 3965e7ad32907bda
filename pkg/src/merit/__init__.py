"""Factor-wise music similarity toolkit.

Everything downstream of a frozen audio encoder: a bit-exact embedding
store, factor-controlled triplet datasets, shallow projection heads trained
with Circle Loss, a disentanglement evaluation protocol, per-factor
retrieval with score fusion, and layer attribution.
"""

from .attribution import AttributionRow, attribute, attribute_head
from .dataset import (FACTORS, FolderEntry, Triplet, TripletManifest,
                      build_class_triplets, build_manifest, count_triplets,
                      expand_folder, load_manifest, save_manifest, split_folders)
from .errors import DegenerateOutputError, FormatError, MeritError
from .evaluator import (EvalReport, disentanglement_matrix, margin_stats,
                        per_class_accuracy, triplet_accuracy, wald_ci)
from .head import (ForwardTrace, HeadConfig, HeadParams, forward, forward_batch,
                   init_head, load_head, save_head, similarity)
from .loss import (LossConfig, TripletBatch, batch_loss_and_grads, circle_loss,
                   loss_grad_sims)
from .retrieval import (Candidate, FactorIndex, FusionStrategy, QueryResult,
                        build_index, concat_cosine, fuse, load_index,
                        query_topk, save_index, search, simplex_grid,
                        tune_weights)
from .store import (ClipMeta, EmbeddingRecord, EmbeddingStore, StoreHeader,
                    read_meta, read_store, validate_store, write_meta,
                    write_store)
from .synth import SynthConfig, SynthResult, factor_block_slice, generate
from .trainer import (OptimizerState, TrainConfig, TrainHistory, adamw_step,
                      cosine_lr, train_head)

__version__ = "0.1.0"
