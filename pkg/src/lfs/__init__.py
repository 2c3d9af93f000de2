"""Learnable frame selector: event-aware temporal scoring, stratified top-k
frame selection, and caption-guided training against a frozen oracle."""

__version__ = "0.1.0"
