"""Causal network motifs and honest exposure trees for network experiments."""
import importlib.resources

from . import assignment
from . import config
from . import estimators
from . import exposure
from . import formatting
from . import graph
from . import motifs
from . import simlab
from . import tree
from . import utils
from .assignment import ClusterBernoulli, IndependentBernoulli, draw, parse_design
from .config import settings
from .estimators import Estimate, gate, hajek, weighted_ls, wsse
from .exposure import Partition, ReplicateFeatures, replicate_features
from .formatting import *
from .graph import Graph, read_edge_list
from .motifs import (
    MissingPolicy,
    MotifCatalog,
    census,
    feature_matrix,
    interference_vector,
    label_counts,
)
from .simlab import ExperimentConfig, run_experiment
from .tree import ExposureTree, HyperParams, analyze, fit, honest_estimate

__version__ = importlib.resources.read_text(__name__, "__version__")
