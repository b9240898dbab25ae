"""Scenario files, random-market experiments, table reproduction and charts."""

from .chart import Series, emit_chart
from .generate import FAMILIES, ExperimentConfig, FamilySetup, family_setup, generate_market, sample_market
from .randexp import RandomExperimentResult, run_random_experiments
from .repro import ReproReport, run_repro_suite, table_constraints, table_markets
from .scenario import Scenario, load_scenario, parse_scenario, serialize_scenario
