"""Inverse optimal control via relaxed Hamilton-Jacobi-Bellman certificates."""
