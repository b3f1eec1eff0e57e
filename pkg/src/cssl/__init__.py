"""Continual self-supervised learning with pseudo-negative regularization.

Desk-scale framework: small MLP stacks over synthetic vector data, exact
analytic gradients for contrastive and non-contrastive objectives with
pseudo-negative terms, class/data/domain-incremental task streams, linear
probing, and stability/plasticity metrics. Everything is deterministic under
a single root seed.
"""

from . import (  # noqa: F401
    cli,
    config,
    continual,
    datastore,
    embedding_queue,
    errors,
    evaluate,
    gradcheck,
    losses,
    model,
    numerics,
)

__version__ = "0.1.0"
