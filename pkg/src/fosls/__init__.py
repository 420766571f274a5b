"""First-order system least-squares finite elements (RT0 x P1) for 2D elliptic problems."""

__version__ = "0.1.0"
