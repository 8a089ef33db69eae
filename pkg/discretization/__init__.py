"""Grids, overlapping decompositions and the weighted p-Laplacian operator family"""
