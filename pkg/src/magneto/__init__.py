"""On-device human activity recognition with incremental class learning.

The package is organized as a pipeline: ``ingest`` turns sensor traces into
fixed-length windows, ``features`` extracts and normalizes statistical
features, ``tensor_nn`` is a small dense embedding network with exact
backprop, ``objective`` holds the contrastive and distillation losses,
``memory`` is the bounded exemplar store, ``ncm`` the nearest-class-mean
classifier, and ``learner`` orchestrates pretraining and on-device class
addition/calibration. ``service`` exposes the online loop over local HTTP
and ``cli`` drives batch workflows.
"""

__version__ = "0.1.0"
