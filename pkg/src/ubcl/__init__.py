"""Ultra-lightweight bidirectional conv-LSTM engine for sensor windows."""

__version__ = "0.1.0"
