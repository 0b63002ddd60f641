import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import FeatureConfig, logger
from .features import FeatureTensor, channel_vector, extract_clip_tensor, flatten_tensor
from .layout import RectIndex
from .models import Clip, Layout
from .sampler import ClipBank

_thread_local = threading.local()


def _index_for(layout: Layout, cell_nm: int) -> RectIndex:
    # One index per layout per worker; pre-cut clips each carry their own tiny layout.
    cache: Dict[int, RectIndex] = getattr(_thread_local, "indexes", None)
    if cache is None:
        cache = _thread_local.indexes = {}
    key = id(layout)
    if key not in cache:
        if len(cache) > 64:
            cache.clear()
        cache[key] = RectIndex.for_layout(layout, cell_nm)
    return cache[key]


def extract_single_clip(layout: Layout, clip: Clip, cfg: FeatureConfig) -> FeatureTensor:
    return extract_clip_tensor(layout, clip, cfg, _index_for(layout, clip.core_nm))


def extract_features(
    pairs: Sequence[Tuple[Layout, Clip]],
    cfg: FeatureConfig,
    threads: int = 1,
) -> List[FeatureTensor]:
    """Feature tensors for every (layout, clip) pair, returned in input order."""
    if not pairs:
        return []
    logger.info(f"Extracting features for {len(pairs)} clips on {threads} thread(s)...")
    step = max(1, len(pairs) // 10)
    tensors: List[Optional[FeatureTensor]] = [None] * len(pairs)
    if threads <= 1:
        for i, (layout, clip) in enumerate(pairs):
            tensors[i] = extract_single_clip(layout, clip, cfg)
            if (i + 1) % step == 0:
                logger.info(f"Progress: {i + 1}/{len(pairs)}")
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            # map keeps input order, so the result does not depend on scheduling
            for i, tensor in enumerate(executor.map(lambda p: extract_single_clip(p[0], p[1], cfg), pairs)):
                tensors[i] = tensor
                if (i + 1) % step == 0:
                    logger.info(f"Progress: {i + 1}/{len(pairs)}")
    return tensors


def build_bank(ids: Sequence[int], tensors: Sequence[FeatureTensor], cfg: FeatureConfig) -> ClipBank:
    """Classifier inputs and first-selection vectors, sorted by clip id."""
    order = np.argsort(np.asarray(ids), kind="stable")
    if not len(order):
        dim = cfg.input_dim
        return ClipBank(np.zeros(0, dtype=np.int64), np.zeros((0, dim), np.float32),
                        np.zeros((0, cfg.grid * cfg.grid)))
    inputs = np.stack([flatten_tensor(tensors[i], cfg.cell_pixels) for i in order]).astype(np.float32)
    vectors = np.stack([channel_vector(tensors[i], cfg.init_channel).values for i in order])
    return ClipBank(np.asarray(ids)[order], inputs, vectors)
