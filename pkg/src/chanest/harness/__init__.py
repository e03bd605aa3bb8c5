from .config import (
    ExperimentConfig,
    default_config,
    load_config,
)
from .pipeline import (
    NmseRow,
    evaluate,
    gen_data,
    read_report,
    run_paths,
    sweep_rf,
    train_variant,
    write_report,
)

__all__ = [name for name in dir() if not name.startswith("_")]
