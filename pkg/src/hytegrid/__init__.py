"""Hierarchical hybrid grids: matrix-free finite elements on block-structured triangle meshes."""

__version__ = "0.1.0"
