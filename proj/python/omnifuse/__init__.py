"""Python surface of the multimodal fusion core.

The compiled extension lives inside the package when installed, or at the
top level of the build tree during development; both layouts work.
"""

try:
    from . import _omnifuse as _core
except ImportError:  # build-tree layout: extension next to the package on sys.path
    import _omnifuse as _core

__version__ = _core.__version__

generate_dataset = _core.generate_dataset
dataset_info = _core.dataset_info
select_dates = _core.select_dates
run_checks = _core.run_checks
pretrain = _core.pretrain
finetune = _core.finetune
evaluate = _core.evaluate
default_config = _core.default_config

__all__ = [
    "__version__",
    "generate_dataset",
    "dataset_info",
    "select_dates",
    "run_checks",
    "pretrain",
    "finetune",
    "evaluate",
    "default_config",
]
