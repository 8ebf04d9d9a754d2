"""Multi-label prediction of cyberattack consequences from CWE weakness text.

The package bundles the full pipeline: CSV ingestion and text cleaning,
iterative multi-label stratification, two trainable backbones (a hierarchical
attention network and a small transformer encoder, both written on plain
numpy with hand-derived backward passes), an Adam/BCE training loop with
checkpointing and early stopping, and a metrics/reporting suite.
"""

from conseq.labels import LABELS, LABEL_TITLES, NUM_LABELS

__all__ = ["LABELS", "LABEL_TITLES", "NUM_LABELS"]
__version__ = "0.1.0"
