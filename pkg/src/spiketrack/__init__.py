"""Spiking detector parts, a batch-adaptive NWD box loss and a staged online tracker.

Submodules: geometry, spiking, head, network, kalman, assignment, tracker,
mot_io, metrics, synthetic, train, ablation, cli.
"""
__version__ = "0.1.0"
