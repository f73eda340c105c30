"""Object-level mapping with super-quadrics fitted to multi-view 2D detections."""

__version__ = "0.1.0"
