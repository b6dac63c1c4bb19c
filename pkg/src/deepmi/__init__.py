"""Differentiable fuzzy histograms, linearized mutual information and
gradient-based 2-DoF image alignment."""

from .grid import Grid, load_pgm, save_pgm
from .infometrics import LossReport, entropy, lmi, lmi_grad_joint, lmi_pair, mutual_information
from .optim import OptimConfig, align, grid_search_oracle
from .softhist import JointHistogram, Histogram1D, normalize, soft_hist_1d, soft_hist_2d
from .warp import Pose2, warp_backward, warp_rigid

__version__ = "0.1.0"

__all__ = [
    "Grid", "load_pgm", "save_pgm",
    "LossReport", "entropy", "lmi", "lmi_grad_joint", "lmi_pair", "mutual_information",
    "OptimConfig", "align", "grid_search_oracle",
    "JointHistogram", "Histogram1D", "normalize", "soft_hist_1d", "soft_hist_2d",
    "Pose2", "warp_backward", "warp_rigid",
]
