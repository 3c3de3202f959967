"""Seizure-risk forecasting from scalp EEG rendered as images.

Stages: :mod:`~eegrisk.eeg_data` (recordings, labels, synthesis),
:mod:`~eegrisk.preprocess` (filters), :mod:`~eegrisk.imaging` (windows to
images), :mod:`~eegrisk.classifier` (CNNs), :mod:`~eegrisk.forecast`
(likelihood and alarms), :mod:`~eegrisk.evaluation` (sweep and reports).
"""
__version__ = "0.1.0"
