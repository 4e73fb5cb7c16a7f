"""Clipped heavy-tailed SGD on multimodal potentials.

Simulation of the clipped recursion, jump widths and transition graphs of
attraction fields, the limiting Markov chain on the widest minima, exit-time
statistics, and a toy tail-inflation optimizer.
"""

__version__ = "0.1.0"
