"""Market clustering against a maximum-entropy bipartite null model, and
price-instability group comparisons."""
__version__ = "1.0.0"

from .clustering import (ClusteringScore, MarketClustering, clustering_scores,
                         drop_isolated_scores, expected_clustering,
                         observed_clustering)
from .graph import (BipartiteSnapshot, TradeRecord, build_snapshot,
                    coverage_split, ingest_trades)
from .grouptests import (CriticalValues, GroupAssignment, TestVerdict,
                         assign_terciles, cdf_curves, chi2_binned,
                         ks_two_sample, mww_test, verdict_table)
from .instability import (InstabilityMeasures, InstabilityReport, ReturnSeries,
                          RiskWindow, hill_index, moments, outlier_counts,
                          rolling_var, segment_slice, value_at_risk,
                          var_dynamics)
from .nullmodel import (BipartiteMaxEntropy, ConvergenceError, NullModel,
                        SolverConfig, solve_null_model)
from .panel import describe_panel, export_panel
from .pipeline import RunConfig, run_pipeline
