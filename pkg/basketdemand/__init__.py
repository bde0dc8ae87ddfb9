"""Consideration-set-constrained linear demand: demand, equilibria, co-purchase proxies, simulation and estimation."""

__version__ = '0.1'
