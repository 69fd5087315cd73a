"""Training run over a dataset directory: fit the network, then calibrate fusion."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .config import SystemConfig
from .errors import ParameterError
from .evaluation import (
    PairProtocol, calibrate_from, compute_eer, extract_all, fuse_scores, load_dataset,
    load_images, score_pairs, split_fingers,
)
from .network import NetworkParams, NetworkSpec
from .pipeline import Pipeline
from .siamese import AdamConfig, train

log = logging.getLogger(__name__)


@dataclass
class TrainingRun:
    params: NetworkParams
    config: SystemConfig
    history: list[float]


def train_model(dataset_root: str | Path, config: SystemConfig = SystemConfig(),
                adam: AdamConfig = AdamConfig(), subset: str = "train",
                spec: NetworkSpec = NetworkSpec()) -> TrainingRun:
    """Train on ``subset`` and calibrate min-max bounds on the same fingers.

    The returned config carries the calibration and, as a starting operating
    point, the fused-score EER threshold on those training comparisons.
    """
    dataset = load_dataset(dataset_root)
    fingers = split_fingers(list(dataset), subset)
    if len(fingers) < 2:
        raise ParameterError(f"subset {subset!r} has fewer than two fingers")
    images = load_images(dataset, fingers)
    params = NetworkParams.initialize(spec, seed=config.seed)
    log.info("training on %d fingers for %d epochs", len(fingers), adam.epochs)
    history = train(params, images, adam, config.contrastive())

    pipeline = Pipeline(params, config)
    impressions = len(images[fingers[0]])
    protocol = PairProtocol(len(fingers), impressions, min(3, impressions))
    feats = extract_all(images, pipeline)
    genuine, impostor = score_pairs(feats, fingers, protocol, pipeline)
    cal = calibrate_from(genuine, impostor)
    fuse_scores(genuine, impostor, cal, config.weights())
    eer = compute_eer(genuine["fusion"], impostor["fusion"])
    cfg = replace(config.with_calibration(cal), operating_threshold=eer.threshold)
    return TrainingRun(params, cfg, history)
