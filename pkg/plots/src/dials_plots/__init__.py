from .figures import plot_ce_curves, plot_learning_curves, plot_runtime_bars
from .runset import Run, RunSet, SchemaError, load_run, load_runset

__all__ = [
    "Run", "RunSet", "SchemaError", "load_run", "load_runset",
    "plot_learning_curves", "plot_runtime_bars", "plot_ce_curves",
]
