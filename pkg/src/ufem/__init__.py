"""Unfitted interior-penalty DG on quadtree meshes with cell merging."""
__version__ = "0.1.0"
