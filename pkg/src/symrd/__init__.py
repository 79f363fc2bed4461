"""Symmetric reinforcement distillation for combinatorial optimization."""

from symrd.instances import Dataset, ProblemInstance, Task, generate, load, save

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ProblemInstance",
    "Task",
    "generate",
    "load",
    "save",
    "__version__",
]
