"""Collaborative image-classifier building.

A sequencing sync server replicates a shared dataset of labeled images
across devices; each device trains a local softmax classifier over
deterministic color features, reviews results on training/testing
dashboards, plays a timed evaluation game, and appends every action to an
analytics-ready activity log.
"""

from .domain import Label, ReplicatedProject, Sample, Split, canonical_digest, canonical_serialize, live_counts
from .errors import CoMLError
from .image import ImageBlob, parse_ppm
from .replication import DatasetOp, Replica, apply
from .training import TrainedModel, Hyperparams, classify, train

__all__ = [
    "CoMLError",
    "DatasetOp",
    "Hyperparams",
    "ImageBlob",
    "Label",
    "Replica",
    "ReplicatedProject",
    "Sample",
    "Split",
    "TrainedModel",
    "apply",
    "canonical_digest",
    "canonical_serialize",
    "classify",
    "live_counts",
    "parse_ppm",
    "train",
]

__version__ = "0.1.0"
