"""Agitation risk detection from in-home sensor streams: synthetic cohort, features, LSTM/B-LSTM, RF baseline."""

__version__ = "0.1.0"
