"""Divide-and-recombine likelihood modeling.

Subset likelihoods are approximated by normal or skew-normal densities fitted
to MCMC draws, then multiplied back together into an all-data approximate
likelihood. The contour probability diagnostic compares any such approximation
against a reference density without normalizing constants.
"""

__version__ = "0.1.0"

from dnrlm.errors import DnrError

__all__ = ["DnrError", "__version__"]
