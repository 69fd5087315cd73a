"""Both feature branches behind one object: embeddings and minutiae for a photo."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .errors import CheckpointError
from .features import extract_features
from .matcher import match_minutiae
from .minutiae import MinutiaeSet
from .network import EmbeddingNet, NetworkParams
from .siamese import similarity


@dataclass(frozen=True)
class Features:
    embedding: np.ndarray
    minutiae: MinutiaeSet


class Pipeline:
    def __init__(self, params: NetworkParams, config: SystemConfig = SystemConfig()):
        self.params = params
        self.config = config
        self.net = EmbeddingNet(params)
        self._extraction = config.extraction()
        self._tolerances = config.tolerances()

    @classmethod
    def from_config(cls, config: SystemConfig) -> Pipeline:
        if not config.checkpoint:
            raise CheckpointError("configuration names no checkpoint")
        return cls(NetworkParams.load(config.checkpoint), config)

    def embed(self, img: np.ndarray) -> np.ndarray:
        return self.net.embed(img)

    def minutiae(self, img: np.ndarray) -> MinutiaeSet:
        return extract_features(img, self._extraction)

    def features(self, img: np.ndarray) -> Features:
        return Features(self.embed(img), self.minutiae(img))

    def raw_scores(self, probe: Features, ref: Features) -> tuple[float, int]:
        """(S_d, S_m) for one comparison."""
        sd = similarity(probe.embedding, ref.embedding)
        sm = match_minutiae(probe.minutiae, ref.minutiae, self._tolerances).value
        return sd, sm
