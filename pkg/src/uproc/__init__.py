"""Sequential U-processes with size-dependent symmetric kernels.

Exact finite-space oracles, Hoeffding/contraction diagnostics, sufficient-
condition checkers for Gaussian functional limits, and Monte Carlo experiment
harnesses for random geometric graphs, changepoint statistics, and
diagonal-dominant quadratic statistics.
"""

__version__ = "0.1.0"

from .rng import RngStream
from .spaces import (circle_uniform, cube_uniform, euclidean_density,
                     exact_expect, finite, sample, uniform_atoms)
from .kernels import Kernel, kernel_table, product_kernel
from .ustat import (EXACT, MonteCarlo, SequentialPath, check_degeneracy,
                    eval_ustat, hoeffding_g, hoeffding_psi, normalize_path,
                    sequential_upath, variance_sigma2)
