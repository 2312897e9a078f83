"""Video-set distillation with an interpolated pool, segment selectors and a temporal fusor."""

__version__ = "0.1.0"
