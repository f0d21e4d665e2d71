"""MOCR toolkit: document parse model, OCR Arena with Elo leaderboards, SVG data engine, render-and-compare scoring."""

__version__ = "1.0.0"
