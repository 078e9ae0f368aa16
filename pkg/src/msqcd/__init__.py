"""Quickest change detection across many data streams.

Submodules
----------
model       observation model, log-likelihood ratios, information numbers
priors      change-point, affected-pattern and parameter mixing priors
statistics  recursive mixture Shiryaev-Roberts, CUSUM and moving-average statistics
detector    stopping rules, thresholds, Monte Carlo calibration
sim         Monte Carlo harness for delay / false-alarm tables
streak2d    moving-object streak detection in image frames
cli         command line entry point
"""

__version__ = "0.1.0"
