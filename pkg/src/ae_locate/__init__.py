"""Acoustic-emission source localization on composite plates.

Synthetic plate simulation, wavelet preprocessing, a parallel-branch
convolutional regressor, Bayesian hyperparameter search and a
time-difference-of-arrival baseline.
"""

__version__ = "0.1.0"
