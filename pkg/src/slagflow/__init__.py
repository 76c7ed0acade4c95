"""Generalized Lagrangian mean curvature flow of graphs ``du`` over flat tori and round spheres.

The potential ``u`` evolves by ``du/dt = theta``, the Lagrangian angle of the graph,
discretised with fourth-order covariant finite differences on a periodic box
(torus) or on two overlapping stereographic charts (sphere).
"""
from .calculus import CovariantJet, check_commutation, covariant_jet
from .flow import FlowConfig, MonitorSeries, run, stability_certificate, step
from .geometry import angle, lagrangian_angle, monitors, residual_rho_sphere, residual_vartheta
from .initial import InitialCondition, initial_field
from .manifold import MetricAtlas, build_sphere, build_torus, transfer_scalar, transfer_tensor

__all__ = [
    "CovariantJet", "FlowConfig", "InitialCondition", "MetricAtlas", "MonitorSeries",
    "angle", "build_sphere", "build_torus", "check_commutation", "covariant_jet",
    "initial_field", "lagrangian_angle", "monitors", "residual_rho_sphere", "residual_vartheta",
    "run", "stability_certificate", "step", "transfer_scalar", "transfer_tensor",
]
__version__ = "0.1.0"
