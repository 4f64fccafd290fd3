"""Numerical laboratory for fitting noise-driven recurrent networks to hidden
Markov model emission statistics and reverse-engineering the trained dynamics.

Subpackages, one per concern:

- ``numerics``: dense linear algebra, PCA, Adam, reproducible random streams
- ``hmm``: HMM families, sampling, analytic observation statistics
- ``rnn``: the recurrent network, Gumbel-Softmax head, manual BPTT
- ``ot``: log-domain Sinkhorn iterations and the debiased divergence
- ``train``: the training loop, checkpoints, loss logs
- ``metrics``: sequence-level performance metrics
- ``dynamics``: fixed points, spectra, zones, perturbation analysis
- ``circuit``: kick-neuron discovery, connectivity, causal interventions
- ``cli``: command-line front end
"""

from .backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
