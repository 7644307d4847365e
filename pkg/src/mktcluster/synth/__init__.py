"""Synthetic data generators and brute-force oracles."""
from .enumeration import (EnsembleEnumeration, enumerate_ensemble,
                          ensemble_expected_motifs, forced_cells,
                          literal_expected_motifs, literal_observed_motifs)
from .generators import (GeneratorSpec, Generated, degree_matched, edge_swap,
                         generate, make_rng, sample_null)
from .prices import ReturnGroup, generate_price_panel
from .scenario import MarketScenario, market_scenario, write_scenario
