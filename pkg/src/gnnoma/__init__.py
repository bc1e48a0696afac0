"""Population-based operational modal analysis with graph neural networks.

Kept free of heavy imports so the CLI can cap BLAS threads before numpy loads.
"""

__version__ = "0.1.0"
