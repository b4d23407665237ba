"""Learned state-density reachability toolkit.

Trains a joint flow-map / density-concentration ReLU network from trajectory
data of a nonlinear system, converts it into an exact union of polyhedral
cells at fixed time slices, and computes reachable sets with density and
probability bounds for probabilistic safety verification.
"""

__version__ = "0.1.0"
