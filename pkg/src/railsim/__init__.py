"""Railway delay forecasting by imitation-learned macroscopic simulation."""

__version__ = "0.1.0"
