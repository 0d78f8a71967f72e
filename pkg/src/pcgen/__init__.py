"""Adversarial and variational autoencoders for 3D point clouds."""

__version__ = "0.1.0"
