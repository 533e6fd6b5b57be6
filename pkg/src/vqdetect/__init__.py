"""One-class detection of synthetic multispectral satellite tiles.

Per-band reconstruction losses of a three-level VQ-VAE-2 trained on pristine
tiles are thresholded at a calibrated false-alarm rate; a two-class CNN is
included as the comparison baseline.
"""
__version__ = "0.1.0"
