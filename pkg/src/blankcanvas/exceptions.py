class BlankCanvasError(Exception):
    """Base class for errors raised by blankcanvas."""


class ImageIOError(BlankCanvasError, OSError):
    """An image or map could not be read or written."""

    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")


class BackendUnavailable(BlankCanvasError, RuntimeError):
    """The requested segmentation backend cannot be constructed or run."""

    def __init__(self, backend, reason):
        self.backend = backend
        super().__init__(f"backend {backend!r} unavailable: {reason}")


class DivergenceError(BlankCanvasError, FloatingPointError):
    """The optimisation produced non-finite losses, gradients or momentum."""


class ConfigError(BlankCanvasError, ValueError):
    """A configuration value violates its invariants."""
