"""Temporal causal discovery from interventional regimes with prior-knowledge initialisation."""

from .data import RegimeDataset, SegmentationConfig, load_manifest, normalize, save_manifest, segment_anomalies
from .discovery import DiscoveryResult, HyperParams, extract_family, fit_discovery
from .estimator import TemporalCausalDiscovery
from .exceptions import ConfigError, DataError, DivergenceError, ParseError, TCDError, TransportError
from .graph import TemporalGraph, acyclicity_value, structural_mask, threshold_extract
from .metrics import LayoutRules, intervention_f1, layout_eval, shd, sid
from .prior import PromptSpec, build_prompt, parse_answer, render_answer, to_init_matrix, to_logits
from .simulate import GenSpec, build_benchmark, dataset1_spec, dataset2_spec

__version__ = "0.1.0"

__all__ = [
    "RegimeDataset", "SegmentationConfig", "load_manifest", "normalize", "save_manifest", "segment_anomalies",
    "DiscoveryResult", "HyperParams", "extract_family", "fit_discovery",
    "TemporalCausalDiscovery",
    "ConfigError", "DataError", "DivergenceError", "ParseError", "TCDError", "TransportError",
    "TemporalGraph", "acyclicity_value", "structural_mask", "threshold_extract",
    "LayoutRules", "intervention_f1", "layout_eval", "shd", "sid",
    "PromptSpec", "build_prompt", "parse_answer", "render_answer", "to_init_matrix", "to_logits",
    "GenSpec", "build_benchmark", "dataset1_spec", "dataset2_spec",
]
