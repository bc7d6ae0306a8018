"""Topographic deep spiking neural networks at desk scale.

Trains small feedforward spiking CNNs under a spatio-temporal constraint
objective that pulls the activity of spatially adjacent units (on a virtual
2D cortical sheet) toward similar firing rates and spike timing, then
quantifies the emergent topography: preference maps, smoothness,
correlation-vs-distance, category selectivity, entropy, Fisher information,
and robustness under input attacks.
"""

from toposnn.autodiff import Tensor
from toposnn.sheet import CorticalSheet, NeuronCluster

__all__ = ["Tensor", "CorticalSheet", "NeuronCluster"]
__version__ = "0.1.0"
