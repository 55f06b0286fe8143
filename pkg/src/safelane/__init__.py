"""Safe lane-change learning on a multi-lane ring road.

Discrete lane decisions come from a shared deep Q-network; a control barrier
function QP vets each decision and filters the continuous controls.
"""
__version__ = "0.1.0"
