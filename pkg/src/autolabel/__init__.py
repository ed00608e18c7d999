"""Semi-supervised auto-labeling engine for object-detection datasets.

Detects on unlabeled pools through pluggable backends, filters and promotes
pseudo-labels, routes uncertain images to a human review queue, fuses
detector outputs, and evaluates with a full detection metric suite.
"""

from autolabel.geometry import BoundingBox, Detection, GeomTransform, iou, nms
from autolabel.dataset import ClassTable, DatasetStore, ImageRecord, Instance

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "Detection",
    "GeomTransform",
    "iou",
    "nms",
    "ClassTable",
    "DatasetStore",
    "ImageRecord",
    "Instance",
    "__version__",
]
