"""Barnes-Hut N-body engine with interchangeable parallel force strategies."""

try:
    from ._gravfarm import *  # noqa: F401,F403
    from ._gravfarm import __doc__ as _doc
except ImportError:  # build-tree layout: extension next to the package
    from _gravfarm import *  # noqa: F401,F403
    from _gravfarm import __doc__ as _doc

__doc__ = _doc
__version__ = "0.1.0"
