"""Privacy-preserving peer-to-peer energy market engine.

A radial-feeder market cleared by per-agent primal-dual iterations, with
every inter-agent exchange protected by a CRT-accelerated Paillier
cryptosystem (two-party) or an additive-masking secret-sharing scheme
(multi-party).
"""

__version__ = "0.1.0"
