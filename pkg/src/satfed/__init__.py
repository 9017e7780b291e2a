"""Federated learning over LEO constellations.

Simulation of spanning-tree/forest model aggregation over inter-satellite
laser links, with link budgets, latency/energy accounting, convergence-bound
evaluation, and a geometric-programming resource optimizer.
"""

__version__ = "0.1.0"
