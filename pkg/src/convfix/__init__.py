"""Generate-and-validate program repair with convolutional seq2seq ensembles."""

__version__ = "0.1.0"
