"""Diffusion M-estimate adaptive filtering over networks, with sparsity-aware variants."""
from .network import (CombinationMatrix, Topology, TopologyError, build_topology,
                      metropolis_weights, validate_combination)
from .signals import (AlphaStable, ContaminatedGaussian, GaussianNoise, GroundTruth,
                      NodeSignalProfile, generate_ground_truth, generate_streams)
from .robust_cost import ThresholdState, update_threshold, score, zero_attractor
from .diffusion import AlgorithmConfig, Trajectory, run_trial, run_trials
from .theory import (CapabilityError, InstabilityError, TheoryModel, attractor_moments,
                     beta_star, estimate_moments, stability_bounds, steady_state_msd,
                     steady_update_probability, transient_step, update_probability)

__version__ = "0.1.0"
