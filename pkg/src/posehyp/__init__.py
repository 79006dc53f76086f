"""Multiple 3D pose hypotheses from 2D joint detections under an anatomical prior."""

__version__ = "0.1.0"
