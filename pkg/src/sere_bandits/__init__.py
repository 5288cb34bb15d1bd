"""Clustering of neural bandits with selective unit reinitialization."""

from .nets import (Network, NetworkShape, ForwardTrace, init_kaiming, forward,
                   forward_batch, sgd_step, last_hidden_features,
                   last_layer_delta, save_network, load_network)
from .plasticity import UtilityState, ResetEvent
from .drift import PhaDetector
from .clustering import (UserEmbedding, ClusterAssignment, club_clusters,
                         mcnb_clusters, validate_assignment)
from .policy import CnbPolicy, PolicyConfig, RoundRecord, select_arm
from .envs import (Round, SyntheticEnvSpec, PiecewiseEnv, PerturbedEnv,
                   make_user_features)
from .ratings import RatingsDataset, RatingsEnv, ingest_ratings, kmeans
from .harness import (ExperimentConfig, run_experiment, run_single, grid_search,
                      sensitivity_sweep, compute_reinit_stats, paired_comparison)

__version__ = "0.1.0"
