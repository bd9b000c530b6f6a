"""Stability toolkit for integrated multistage stochastic programs with Markov state transitions."""
