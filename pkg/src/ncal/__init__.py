"""Neural-collapse guided active learning: acquisition scores, diagnostics and a toy simulator."""
from .acquisition import (AcquisitionResult, CheckpointPredictions, cma, cmap_bruteforce,
                          cmap_closed_form, feature_fluctuation, score_candidates, select_top_k,
                          updated_mean, zscore)
from .collapse import (CollapseReport, collapse_report, interclass_distances, nc1_variability,
                       nc2_etf_deviation, nc4_nearest_mean_agreement)
from .pool import ClassStats, FeatureMatrix, PoolState, apply_label, compute_class_stats

__version__ = "0.1.0"
