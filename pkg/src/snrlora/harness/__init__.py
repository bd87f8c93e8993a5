from .config import PRESETS, ConfigError, ExperimentConfig, planted_config
from .model import AdaptedMLP
from .reporting import compare_scorers, score_trace_report
from .task import SyntheticTask, generate_task
from .training import RunMetrics, run_experiment
