"""Segmenter test doubles shared across test modules."""

import numpy as np

from aadfss.correlation import SupportEncoding
from aadfss.tensor import Tensor


class LookupSegmenter:
    """Test double that answers from a table of query ground truths."""

    uses_support = True

    def __init__(self, index, split="test", invert=False, background=False):
        self.table = {s.image.tobytes(): s.mask for s in index.samples(split)}
        self.invert, self.background = invert, background
        self.forward_count = 0

    def encode_support(self, image, mask):
        return SupportEncoding([], [])

    def segment(self, support, query_image, q_seed=0):
        self.forward_count += 1
        gt = self.table[query_image.tobytes()].astype(bool)
        fg = np.zeros_like(gt) if self.background else (~gt if self.invert else gt)
        return Tensor(np.stack([np.where(fg, -8.0, 8.0), np.where(fg, 8.0, -8.0)]))
