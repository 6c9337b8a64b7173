"""Discrete-event simulator for C-V2X Mode-4 sidelink broadcast.

Sensing-based semi-persistent scheduling, distributed congestion control
(rate + range control) and the spatio-temporal metrics built on top of them.
"""

__version__ = "0.1.0"
