"""Joint sequence-structure diffusion pre-training for protein encoders, with siamese conformer trajectories."""

__version__ = "0.1.0"

from .core import Protein, RigidTransform, WrappedNormal, perturb_torsional, rmsd, rotate_about_axis, sample_wrapped_normal
from .diffusion import DiffusionSchedule, NoisyState, chain_rule_target, make_schedule
from .encoder import Architecture, EncodedProtein, GradientBundle, ModelParams, encode
from .evaluate import PredictionSet, RankingSet, denoising_probe, fmax, spearman_global, spearman_mean
from .ingest import GraphConfig, ProteinGraph, build_graph, load_toy_set, parse_pdb_subset
from .pretrain import LossReport, PretrainConfig, diffpret_loss, run_pretraining, siamdiff_loss, simulate_conformer

__all__ = [
    "Architecture", "DiffusionSchedule", "EncodedProtein", "GradientBundle", "GraphConfig", "LossReport",
    "ModelParams", "NoisyState", "PredictionSet", "PretrainConfig", "Protein", "ProteinGraph", "RankingSet",
    "RigidTransform", "WrappedNormal", "build_graph", "chain_rule_target", "denoising_probe", "diffpret_loss",
    "encode", "fmax", "load_toy_set", "make_schedule", "parse_pdb_subset", "perturb_torsional", "rmsd",
    "rotate_about_axis", "run_pretraining", "sample_wrapped_normal", "siamdiff_loss", "simulate_conformer",
    "spearman_global", "spearman_mean",
]
