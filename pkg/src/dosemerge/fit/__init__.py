"""Hierarchical model fitting: MCMC, sequential priors and the hybrid estimator."""
