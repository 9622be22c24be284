"""blastcast: blast-wave ground truth, a ConvGRU surrogate, and P-I damage maps."""

__version__ = "0.1.0"
