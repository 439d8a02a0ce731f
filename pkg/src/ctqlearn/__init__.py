"""Model-free optimal control of continuous-time systems by off-policy Q-learning."""

__version__ = "0.1.0"
