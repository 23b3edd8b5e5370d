"""Early rug-pull detection for DEX token launches.

Labels tokens from their first hour of pool and trade history, extracts features
from the first few minutes, and trains tree ensembles written from scratch on
numpy. See ``ruglab.cli`` for the command line entry point.
"""

__version__ = "0.1.0"
