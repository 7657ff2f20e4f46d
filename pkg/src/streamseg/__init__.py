"""Bundle segmentation from tractograms by exact MDF radius search and
iterative streamline-based registration."""

__version__ = "0.1.0"
