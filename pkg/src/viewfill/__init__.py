"""viewfill: image-guided point cloud completion.

A coarse completion is generated directly from a single RGB image and fused
with a downsampled partial scan; a transformer refiner then iteratively
predicts per-point coordinate offsets, attending to both point and image
features, until the final completed cloud is produced.
"""

__version__ = "0.1.0"

from viewfill.geometry import PointCloud, normalize, fps_sample
from viewfill.metrics import MetricReport, chamfer_distance, fscore

__all__ = [
    "PointCloud",
    "normalize",
    "fps_sample",
    "MetricReport",
    "chamfer_distance",
    "fscore",
]
