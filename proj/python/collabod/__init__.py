"""Python bindings for the collabod detector toolkit."""

from ._core import (
    CollabodError,
    Model,
    conv2d,
    dfl_decode,
    evaluate,
    gradcheck,
    gradcheck_targets,
    load_cten,
    max_pool2d,
    save_cten,
)

__all__ = [
    "CollabodError",
    "Model",
    "conv2d",
    "dfl_decode",
    "evaluate",
    "gradcheck",
    "gradcheck_targets",
    "load_cten",
    "max_pool2d",
    "save_cten",
]
