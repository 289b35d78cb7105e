"""Few-shot group anomaly detection on subgraph datasets.

Pipeline stages: feature-based node scoring (PCA + calibrated scorer),
greedy extraction of candidate anomaly groups, dual-level contrastive
pretraining of a feature-deviation relational encoder, and proportion-
weighted few-shot finetuning with group-context score refinement.
"""

from .graph import Dataset, Subgraph, load_dataset, save_dataset, validate

__all__ = ["Dataset", "Subgraph", "load_dataset", "save_dataset", "validate"]

__version__ = "0.1.0"
