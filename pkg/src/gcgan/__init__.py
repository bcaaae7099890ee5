"""Graph-convolutional GAN for correlated multi-farm wind power scenarios."""
from .data import Dataset, SynthSpec, estimate_correlation, load_csv, synthesize, write_csv
from .evaluation import EvalReport, evaluate, evaluate_scenarios, generate_scenarios
from .graph_filter import build_graph_filter
from .model import Discriminator, GcganModel, Generator, Variant, parameter_count
from .training import Checkpoint, ModelConfig, TrainConfig, TrainHistory, train

__all__ = [
    "Checkpoint", "Dataset", "Discriminator", "EvalReport", "GcganModel", "Generator",
    "ModelConfig", "SynthSpec", "TrainConfig", "TrainHistory", "Variant",
    "build_graph_filter", "estimate_correlation", "evaluate", "evaluate_scenarios",
    "generate_scenarios", "load_csv", "parameter_count", "synthesize", "train", "write_csv",
]
