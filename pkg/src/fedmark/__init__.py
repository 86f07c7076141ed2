"""Client-side backdoor watermarking for secure federated learning.

Subpackages:
  nn        from-scratch CNN engine (compiled kernels + numpy fallback)
  data      dataset loading, synthesis, resizing, federated partitioning
  trigger   secret keys, trigger-set construction, keyspace accounting
  he        mock additive-homomorphic encryption boundary
  fl        federated training orchestrator with watermark-scaled transmit
  watermark embedding policy and black-box verification protocol
  attacks   removal/forgery attack suite
  harness   experiment runner and CLI
"""

__version__ = "0.1.0"
