"""Contrastive learning as a coordinate-wise game between pairwise importance and the encoder."""

from .core import AlphaSource as AlphaSource
from .core import Batch as Batch
from .core import DistanceSet as DistanceSet
from .core import PairImportance as PairImportance
from .energy import ContrastiveCov as ContrastiveCov
from .energy import contrastive_cov as contrastive_cov
from .energy import energy as energy
from .loss_family import LossKind as LossKind
from .loss_family import LossSpec as LossSpec
from .utils import AlphaCLException as AlphaCLException

__version__ = "0.1.0"
