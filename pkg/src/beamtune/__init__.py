"""Beamline tuning toolkit: lattice parsing, linear tracking, an MDP
environment over watch-point segments, and optimizers (DDPG with stage
learning, differential evolution, random search)."""

__version__ = "0.1.0"
