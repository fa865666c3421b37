"""Edge-gradient similarity, Edge-Loss and oriented-box fitting on synthetic scenes."""

from .errors import EdgeObbError
from .geometry import OrientedBox

__all__ = ["EdgeObbError", "OrientedBox"]
__version__ = "0.1.0"
