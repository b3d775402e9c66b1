"""Deep temporal interpolation and clustering (dTIC) of irregular vital signs."""
from .clustering import adjusted_rand_index, assign_nearest, kmeans, kl_loss, soft_assign, target_dist
from .kernels import BACKEND
from .modelsel import KReport, k_report
from .timeseries import Encounter, IrregularSeries, generate_synthetic_cohort, load_ranges, preprocess
from .trainer import TrainConfig, cluster_train, finalize_labels, init_clusters, pretrain

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Encounter", "IrregularSeries", "KReport", "TrainConfig",
    "adjusted_rand_index", "assign_nearest", "cluster_train", "finalize_labels",
    "generate_synthetic_cohort", "init_clusters", "k_report", "kl_loss", "kmeans",
    "load_ranges", "preprocess", "pretrain", "soft_assign", "target_dist",
]
