"""Stochastic Nernst-Planck-Navier-Stokes simulation on a MAC grid."""
