"""Deep metric learning with a density-adaptivity regularizer, in plain numpy."""

from .data import (Checkpoint, Dataset, SynthConfig, load_checkpoint, load_features,
                   load_split, save_checkpoint, save_features, synthesize)
from .density import (DensityState, avg_intra_distance, class_centroid, compute_d0,
                      density_regularizer, joint_objective)
from .evaluation import EvalReport, evaluate, kmeans, nmi, recall_at_k
from .linalg import dot, l2_normalize, sq_euclidean
from .losses import (LossGradients, PairSet, TripletSet, TupletSet, contrastive_loss,
                     npair_loss, triplet_loss)
from .model import AdamState, EmbeddingNet, adam_step, backward, forward
from .sampler import BatchPlan, make_batch, mine_pairs, mine_triplets, mine_tuplets
from .training import (TrainConfig, TrainState, checkpoint_from_state, init_state,
                       state_from_checkpoint, train)

__version__ = "0.1.0"
