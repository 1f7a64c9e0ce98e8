"""plotkit: figure rendering for fedsim run directories."""

from .runs import (
    DensityTable,
    RoundsTable,
    RunHandle,
    SchemaError,
    load_density,
    load_rounds,
    open_run,
)
from .plots import plot_convergence, plot_fairness

__version__ = "0.1.0"

__all__ = [
    "DensityTable",
    "RoundsTable",
    "RunHandle",
    "SchemaError",
    "load_density",
    "load_rounds",
    "open_run",
    "plot_convergence",
    "plot_fairness",
    "__version__",
]
