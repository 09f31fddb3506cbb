from .episodes import Episode, eligible_classes, sample_episode
from .generate import TAGS, DatasetError, GenConfig, apply_hard_transform, generate_dataset, render_sample
from .index import DatasetIndex, Sample, load_manifest
from .pnm import PNMFormatError, read_image, read_mask, write_image, write_mask

__all__ = [
    "TAGS", "DatasetError", "DatasetIndex", "Episode", "GenConfig", "PNMFormatError", "Sample",
    "apply_hard_transform", "eligible_classes", "generate_dataset", "load_manifest", "read_image",
    "read_mask", "render_sample", "sample_episode", "write_image", "write_mask",
]
