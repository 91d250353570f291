"""Kernel low-rank manifold reconstruction of free-breathing spiral cardiac MRI.

The package simulates a dynamic cardiac phantom acquired with golden-angle
dual-density spirals, and reconstructs it with an iteratively estimated
manifold Laplacian, along with navigator-based, SENSE-initialised and
Schatten-p low-rank baselines.
"""
__version__ = "0.1.0"

from .phantom import PhantomSpec, GroundTruthSeries, generate_phantom
from .trajectory import SpiralAcquisition, make_acquisition
from .operators import SamplingOperator, MultiCoilKSpace, CoilMaps
from .manifold import LaplacianMatrix, KernelMatrix
from .solvers import (ReconConfig, ReconResult, storm_iterative, storm_sense,
                      storm_selfnav, lowrank_recon, solve_image_update)
from .metrics import ser, ssim, hfen, RegionOfInterest

__all__ = [
    "__version__", "PhantomSpec", "GroundTruthSeries", "generate_phantom",
    "SpiralAcquisition", "make_acquisition", "SamplingOperator", "MultiCoilKSpace",
    "CoilMaps", "LaplacianMatrix", "KernelMatrix", "ReconConfig", "ReconResult",
    "storm_iterative", "storm_sense", "storm_selfnav", "lowrank_recon",
    "solve_image_update", "ser", "ssim", "hfen", "RegionOfInterest",
]
