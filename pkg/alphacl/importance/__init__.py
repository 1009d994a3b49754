"""Pairwise importance: gradient-derived, regularized and direct alpha."""

from .direct import DirectDistance as DirectDistance
from .direct import alpha_direct as alpha_direct
from .gradient import FeasibilityReport as FeasibilityReport
from .gradient import alpha_from_gradient as alpha_from_gradient
from .gradient import budget_from_loss as budget_from_loss
from .gradient import check_feasible as check_feasible
from .regularized import RegularizerKind as RegularizerKind
from .regularized import RegularizerSpec as RegularizerSpec
from .regularized import alpha_entropy as alpha_entropy
from .regularized import alpha_inverse as alpha_inverse
from .regularized import alpha_square as alpha_square
from .regularized import costs_from_distances as costs_from_distances
from .regularized import project_to_simplex as project_to_simplex
from .regularized import solve_regularized as solve_regularized
from .sources import DirectAlpha as DirectAlpha
from .sources import FixedAlpha as FixedAlpha
from .sources import GradientAlpha as GradientAlpha
from .sources import RegularizedAlpha as RegularizedAlpha
from .sources import alpha_source_from_flat as alpha_source_from_flat
from .sources import alpha_source_from_params as alpha_source_from_params
