"""Self-supervised pretraining for graph-recurrent seizure-window detection."""

__version__ = "0.1.0"
