"""Action representation learning over symbolic scene-graphs."""

__version__ = "0.1.0"
