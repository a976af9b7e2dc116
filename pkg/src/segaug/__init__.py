"""Segment-level augmentation, ranking-loss kernels and retrieval metrics for logo retrieval."""

__version__ = "0.1.0"

from .image import Color, RasterImage, load_image, save_image
from .segmentation import SegmentInfo, SegmentMap, label_components, quantize, segment_image
from .augment import (
    AugmentationConfig,
    AugmentationRecord,
    NPolicy,
    augment_image,
    color_change,
    remove_segment,
    rotate_segment,
    select_segments,
)
from .losses import ScoreBatch, SmoothApParams, TripletBatch, exact_ap, grad_check, smooth_ap_loss, triplet_loss
from .sampler import BatchSpec, SimilarityManifest, batch_labels, sample_batch
from .evaluation import RankingRun, evaluate, nar_single
