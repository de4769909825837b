"""Darcy-flow solving, tensor-permeability upscaling and error surveys."""

__version__ = "0.1.0"
