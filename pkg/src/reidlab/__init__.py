"""Person re-identification toolkit: synthetic data, handcrafted descriptors,
metric learning, small MLPs with knowledge distillation, evaluation and
throughput benchmarking."""

__version__ = "0.1.0"
