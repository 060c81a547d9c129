"""Projection of trained weights back through a coarse-graining layer, and
the multi-scale training schedule built on it.

A layer maps fine states to coarse states; fine-graining applies the
transposed map to the weights, so the model output on any fine sample equals
the coarse output on its coarse-grained image, exactly when no truncation is
requested. Conjugate isometries expand each coarse site into two fine sites
(one SVD split each), then conjugate disentanglers undo the pair mixing.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .coarsegrain import ScaleCache, apply_pair_gates
from .errors import ArgumentError, DimensionError, StateError
from .mps import MPS
from .tensor import svd_split
from .trainer import SweepEvent, SweepStats, TrainConfig, train
from .wavelet import WaveletMeraLayer


def fine_grain_weights(w: MPS, layer: WaveletMeraLayer, delta: float = 0.0,
                       chi_max: int | None = None) -> tuple[MPS, float]:
    """Map weights on N coarse sites to 2N fine sites through ``layer``.

    Returns the fine weights and the summed truncation error; with
    ``delta=0`` and unbounded ``chi_max`` the projection is exact and the
    model output is preserved sample for sample.
    """
    if layer.n_sites_in != 2 * len(w):
        raise DimensionError(f"layer covers {layer.n_sites_in} fine sites, "
                             f"weights would expand to {2 * len(w)}")
    if any(d != 2 for d in w.site_dims):
        raise DimensionError("fine-graining expects site dimension 2 everywhere")
    v3 = layer.isometry.reshape(2, 2, 2)  # (coarse, s, t)
    cores = []
    total = 0.0
    for core in w.cores:
        # conjugate isometry: expand the coarse site into a fine pair
        block = np.einsum("lcr,cst->lstr", core, v3)
        res = svd_split(block, (0, 1), delta, chi_max)
        cores.append(res.left_factor)
        cores.append((res.singular_values[:, None, None] * res.right_factor))
        total += res.truncation_error
    fine = MPS(cores)
    # Conjugate disentanglers use the same pair wiring; transposing the gate
    # flips the contraction orientation, which is exactly conjugation.
    fine, err = apply_pair_gates(fine, layer.disentangler.T, delta, chi_max)
    return fine, total + err


def multiscale_schedule(cache: ScaleCache, layers: Sequence[WaveletMeraLayer],
                        cfgs: TrainConfig | Sequence[TrainConfig],
                        start_scale: int, end_scale: int,
                        task: str = "regression", w0: MPS | None = None,
                        threads: int = 1,
                        monitor: Callable[[SweepEvent], None] | None = None,
                        ) -> tuple[MPS, list[list[SweepStats]]]:
    """Train at the coarsest requested scale, then alternately fine-grain and
    retrain down to ``end_scale``.

    ``layers[i]`` must be the layer that coarse-grained scale i into scale
    i+1. Returns the final weights and one stats list per visited scale,
    coarsest first.
    """
    if not 0 <= end_scale <= start_scale:
        raise ArgumentError(f"need 0 <= end_scale <= start_scale, got "
                            f"({start_scale}, {end_scale})")
    if start_scale >= cache.n_scales:
        raise StateError(f"scale {start_scale} is not cached "
                         f"({cache.n_scales} scales present)")
    if len(layers) < start_scale:
        raise ArgumentError(f"need a layer per scale step, got {len(layers)}")
    for i in range(end_scale, start_scale):
        if layers[i].n_sites_in != cache.scales[i].n_sites:
            raise DimensionError(f"layer {i} covers {layers[i].n_sites_in} sites, "
                                 f"scale {i} has {cache.scales[i].n_sites}")

    def cfg_for(scale: int) -> TrainConfig:
        if isinstance(cfgs, TrainConfig):
            return cfgs
        return cfgs[scale]

    w, stats = train(cache.scales[start_scale], cfg_for(start_scale), w0=w0,
                     task=task, threads=threads, monitor=monitor)
    all_stats = [stats]
    for scale in range(start_scale - 1, end_scale - 1, -1):
        cfg = cfg_for(scale)
        w, _ = fine_grain_weights(w, layers[scale], cfg.delta_weights, cfg.chi_max)
        w, stats = train(cache.scales[scale], cfg, w0=w, task=task,
                         threads=threads, monitor=monitor)
        all_stats.append(stats)
    return w, all_stats
