"""Acoustic cough screening: DSP front end, three classifiers, veto mediator,
and the HTTP screening service."""

__version__ = "0.1.0"
