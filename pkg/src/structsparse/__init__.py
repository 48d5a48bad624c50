"""Structured sparsity projections: tree and constrained-EMD models."""

from .cemd_model import *  # noqa: F401,F403
from .cemd_model import __all__ as _cemd_all
from .recovery import *  # noqa: F401,F403
from .recovery import __all__ as _rec_all
from .rs_conv import *  # noqa: F401,F403
from .rs_conv import __all__ as _rs_all
from .tree_model import *  # noqa: F401,F403
from .tree_model import __all__ as _tree_all

__version__ = "0.1.0"
__all__ = [*_rs_all, *_tree_all, *_cemd_all, *_rec_all]
