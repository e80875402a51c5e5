"""Modular deep reinforcement learning on numpy: agents, networks, buffers and envs composed from registries."""

__version__ = "1.0.0"
