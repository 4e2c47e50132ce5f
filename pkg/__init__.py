"""Module that partitions networks of dynamical subsystems for distributed MPC."""
