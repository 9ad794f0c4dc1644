"""beekit: train item-text encoders through a sparse linear autoencoder
decoder on implicit-feedback interaction data, and evaluate the resulting
embeddings in cold-start, zero-shot and time-split scenarios.
"""

from beekit.kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
