"""Quality-diversity under uncertainty: trading off fitness and reproducibility."""
from .core import DeltaPreference, EstimatorConfig, EvaluationSample, SolutionRecord
from .archive import GridArchive, GridSpec, ParetoArchive, project_pareto_archive
from .tasks import TaskSpec, list_tasks, load_task
from .algorithms import Algorithm, AlgorithmConfig, MutationConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Algorithm",
    "AlgorithmConfig",
    "DeltaPreference",
    "EstimatorConfig",
    "EvaluationSample",
    "GridArchive",
    "GridSpec",
    "MutationConfig",
    "ParetoArchive",
    "SolutionRecord",
    "TaskSpec",
    "list_tasks",
    "load_task",
    "project_pareto_archive",
    "run_experiment",
]
