"""Diffusion-model simulations of fMRI neurofeedback: NERD (REINFORCE-tuned) and a deterministic control."""

__version__ = "0.1.0"
