"""Convolutional and shallow classifiers benchmarked on synthetic fluorescence images."""
__version__ = "0.1.0"
