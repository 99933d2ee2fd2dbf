"""Multi-scale residual network toolkit for hyperspectral image classification.

Self-contained: a tape-based autodiff engine drives 3-D convolutional
training on CPU, with dataset ingestion, stratified splitting, the full
training protocol, evaluation metrics and classification-map rendering.
"""

__version__ = "0.1.0"
