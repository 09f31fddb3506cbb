"""Wiring of encoder, correlation learner, AAD learner and decoder into ablation arms."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .aad import AADLearner, initial_queries
from .config import RunConfig
from .correlation import SupportEncoding, average_supports, correlation_forward
from .decoder import Decoder, fuse
from .encoder import Encoder, Projection, image_tensor, mask_pyramid
from .nn import Module
from .tensor import Tensor


class FewShotSegmenter(Module):
    """One model class covers every arm:

    * baseline: coarse masks replaced by constant ones, decoder sees raw query features
    * cl: coarse masks from the correlation learner gate the query features
    * aad / maskadd / concat: additionally distilled queries add N response channels
    """

    def __init__(self, config: RunConfig):
        config.validate()
        rng = np.random.default_rng([config.seed, 7])
        self.encoder = Encoder(rng, config.in_channels, config.stem_width, config.widths)
        self.projection = Projection(rng, config.widths, config.l)
        if config.enable_aad:
            self.aad = AADLearner(config.l, rng, config.fusion)
        entry = config.l + (config.N if config.enable_aad else 0)
        self.decoder = Decoder(rng, entry, config.l)
        self.l = config.l
        self.N = config.N
        self.enable_cl = config.enable_cl
        self.enable_aad = config.enable_aad
        self.fusion = config.fusion
        self.input_scale = config.input_scale
        self.forward_count = 0

    @property
    def uses_support(self) -> bool:
        return self.enable_cl

    def encode_support(self, image: np.ndarray, mask: np.ndarray) -> SupportEncoding:
        return SupportEncoding(self.encoder(image_tensor(image, self.input_scale)), mask_pyramid(mask))

    def coarse_masks(self, support: SupportEncoding, query_feats: list[Tensor]) -> list[Tensor]:
        if not self.enable_cl:
            return [Tensor(np.ones(f.shape[1:])) for f in query_feats]
        return correlation_forward(support.feats, query_feats, support.masks)

    def segment(self, support: SupportEncoding | None, query_image: np.ndarray, q_seed: int = 0,
                q_in: Tensor | None = None) -> Tensor:
        """2 x H x W logits for ``query_image`` given one (possibly averaged) support."""
        self.forward_count += 1
        qimg = image_tensor(query_image, self.input_scale)
        fq = self.encoder(qimg)
        Pq = self.projection(fq)
        Mq = self.coarse_masks(support, fq)
        q_hat = None
        if self.enable_aad:
            Ps = self.projection(support.feats)
            if q_in is None:
                q_in = initial_queries(self.N, self.l, q_seed)
            q_hat = self.aad.distill(q_in, Ps, Pq, support.masks, Mq)
        fused = [fuse(m, q_hat, p) for m, p in zip(Mq, Pq)]
        return self.decoder(fused, qimg.shape[1:])

    def forward(self, support_image, support_mask, query_image, q_seed: int = 0) -> Tensor:
        support = self.encode_support(support_image, support_mask) if self.uses_support else None
        return self.segment(support, query_image, q_seed)

    def segment_average(self, supports, query_image, q_seed: int = 0) -> Tensor:
        """K supports collapsed at the feature/mask level, then one segmentation forward."""
        if not supports:
            raise ValueError("need at least one support")
        enc = None
        if self.uses_support:
            enc = average_supports([self.encode_support(img, m) for img, m in supports])
        return self.segment(enc, query_image, q_seed)


def build_model(config: RunConfig) -> FewShotSegmenter:
    return FewShotSegmenter(config)
