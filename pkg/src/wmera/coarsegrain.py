"""Application of coarse-graining layers to MPS-encoded samples, plus the
on-disk cache of every sample at every scale.

Disentanglers are applied pair by pair as two-site gates, each followed by a
truncated SVD re-split. The pair straddling the chain ends (periodic wrap)
cannot be merged across the open boundary, so it is applied as a sum of
per-end operator pairs and recompressed; see :func:`apply_pair_gates`.
Isometries then contract the even pairs into coarse sites, halving the chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError, DimensionError, FormatError, StateError
from .mps import (
    MPS,
    BondTensor,
    canonicalize,
    compress,
    inner,
    merge_bond,
    product_state,
    read_mps_record,
    split_bond,
    write_mps_record,
)
from .util import sha256_file, thread_map
from .wavelet import WaveletMeraLayer, build_daub4_layer

# A gate contracts its first (row) index with the incoming pair state:
# out[ab] = sum_st in[st] gate[st, ab]. This orientation, together with
# placing disentanglers on the (2i+1, 2i+2) pairs, is what makes a layer act
# as the stride-2 stencil of daub4_from_angles; single_particle_response and
# its tests pin the convention.

_IDENTITY4 = np.eye(4)


def _gate4(gate: np.ndarray) -> np.ndarray:
    gate = np.asarray(gate, dtype=np.float64)
    if gate.shape != (4, 4):
        raise DimensionError(f"two-site gates must be 4x4, got {gate.shape}")
    return gate.reshape(2, 2, 2, 2)


def _apply_gate_adjacent(m: MPS, g4: np.ndarray, j: int, delta: float,
                         chi_max: int | None) -> tuple[MPS, float]:
    m = canonicalize(m, j)
    b = merge_bond(m, j)
    gated = np.einsum("lstr,stab->labr", b.value, g4)
    return split_bond(m, BondTensor(gated, j), delta, chi_max, j + 1)


def _end_operator_pairs(g4: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor a two-site gate into per-end operator pairs.

    Returns arrays (r, 2, 2): entry r acts on one end as in->out, and the
    gate equals sum_r left_ops[r] (x) right_ops[r].
    """
    k = g4.transpose(0, 2, 1, 3).reshape(4, 4)
    u, s, vh = np.linalg.svd(k)
    keep = s > 1e-14 * max(s[0], 1.0)
    root = np.sqrt(s[keep])
    left_ops = (u[:, keep] * root).T.reshape(-1, 2, 2)
    right_ops = (root[:, None] * vh[keep]).reshape(-1, 2, 2)
    return left_ops, right_ops


def _block_diag_core(core: np.ndarray, k: int) -> np.ndarray:
    dl, d, dr = core.shape
    out = np.zeros((k * dl, d, k * dr))
    for i in range(k):
        out[i * dl:(i + 1) * dl, :, i * dr:(i + 1) * dr] = core
    return out


def _apply_gate_straddling(m: MPS, g4: np.ndarray, delta: float,
                           chi_max: int | None) -> tuple[MPS, float]:
    """Gate on the (last, first) pair: stack end operators, then recompress.

    A joint SVD re-split of the two end sites would thread a bond around the
    whole loop, so instead the state becomes a sum over the gate's per-end
    operator pairs (a block-diagonal bond enlargement) and one compression
    sweep restores minimal bonds.
    """
    left_ops, right_ops = _end_operator_pairs(g4)
    k = left_ops.shape[0]
    first, last = m.cores[0], m.cores[-1]
    new_first = np.concatenate(
        [np.einsum("tb,ltr->lbr", q, first) for q in right_ops], axis=2)
    new_last = np.concatenate(
        [np.einsum("sa,lsr->lar", p, last) for p in left_ops], axis=0)
    middles = [_block_diag_core(c, k) for c in m.cores[1:-1]]
    return compress(MPS([new_first, *middles, new_last]), delta, chi_max)


def apply_pair_gates(m: MPS, gate: np.ndarray, delta: float,
                     chi_max: int | None) -> tuple[MPS, float]:
    """Apply ``gate`` to every pair (2i+1, 2i+2 mod N), wrapping periodically.

    Returns the new state and the summed truncation error. The identity gate
    short-circuits to the input.
    """
    n = len(m)
    if n < 4 or n % 2:
        raise DimensionError(f"pair gates need an even chain of >= 4 sites, got {n}")
    if any(d != 2 for d in m.site_dims):
        raise DimensionError("pair gates expect site dimension 2 everywhere")
    if np.array_equal(gate, _IDENTITY4):
        return m, 0.0
    g4 = _gate4(gate)
    total = 0.0
    out = m
    for i in range(n // 2 - 1):
        out, err = _apply_gate_adjacent(out, g4, 2 * i + 1, delta, chi_max)
        total += err
    out, err = _apply_gate_straddling(out, g4, delta, chi_max)
    return out, total + err


def apply_disentanglers(m: MPS, layer: WaveletMeraLayer,
                        delta_data: float = 1e-12,
                        chi_data: int | None = 16) -> MPS:
    """Apply the layer's disentanglers to all odd pairs of ``m``."""
    if len(m) != layer.n_sites_in:
        raise DimensionError(f"layer expects {layer.n_sites_in} sites, state has {len(m)}")
    out, _ = apply_pair_gates(m, layer.disentangler, delta_data, chi_data)
    return out


def apply_isometries(m: MPS, layer: WaveletMeraLayer) -> MPS:
    """Contract every even pair (2i, 2i+1) into one coarse site."""
    if len(m) != layer.n_sites_in:
        raise DimensionError(f"layer expects {layer.n_sites_in} sites, state has {len(m)}")
    if any(d != 2 for d in m.site_dims):
        raise DimensionError("isometries expect site dimension 2 everywhere")
    v3 = layer.isometry.reshape(2, 2, 2)  # (coarse, s, t)
    cores = []
    for i in range(len(m) // 2):
        pair = np.tensordot(m.cores[2 * i], m.cores[2 * i + 1], axes=(2, 0))
        cores.append(np.einsum("lstr,cst->lcr", pair, v3))
    return MPS(cores)


def apply_layer(m: MPS, layer: WaveletMeraLayer, delta_data: float = 1e-12,
                chi_data: int | None = 16) -> MPS:
    return apply_isometries(apply_disentanglers(m, layer, delta_data, chi_data), layer)


def coarse_grain_sample(m: MPS, n_layers: int, delta_data: float = 1e-12,
                        chi_data: int | None = 16) -> list[MPS]:
    """Full ladder [input, one layer coarser, ..., n_layers coarser].

    The chain length must be divisible by 2**n_layers and the coarsest chain
    must keep at least two sites.
    """
    n = len(m)
    if n_layers < 0:
        raise ArgumentError("n_layers must be >= 0")
    if n_layers:
        if n % (1 << n_layers):
            raise ArgumentError(f"{n} sites not divisible by 2**{n_layers}")
        if n >> (n_layers - 1) < 4:
            raise ArgumentError(f"{n_layers} layers on {n} sites would leave "
                                "fewer than two coarse sites")
    scales = [m]
    for _ in range(n_layers):
        layer = build_daub4_layer(len(scales[-1]))
        scales.append(apply_layer(scales[-1], layer, delta_data, chi_data))
    return scales


def single_particle_response(layer: WaveletMeraLayer, n: int | None = None) -> np.ndarray:
    """Linear response matrix of one layer, shape (n/2, n).

    Entry (i, j) is the coarse amplitude on the excited component of site i
    when the input is a product state excited at fine site j only. Rows are
    shifted copies of the layer's 4-tap stencil at stride 2, periodic.
    """
    if n is None:
        n = layer.n_sites_in
    if n != layer.n_sites_in:
        raise ArgumentError(f"n={n} does not match the layer ({layer.n_sites_in})")
    ground = np.array([1.0, 0.0])
    excited = np.array([0.0, 1.0])
    probes = [product_state([excited if i == k else ground for i in range(n // 2)])
              for k in range(n // 2)]
    resp = np.zeros((n // 2, n))
    for j in range(n):
        fine = product_state([excited if i == j else ground for i in range(n)])
        coarse = apply_layer(fine, layer, 0.0, None)
        for k, probe in enumerate(probes):
            resp[k, j] = inner(probe, coarse)
    return resp


@dataclass
class ScaleData:
    """Samples and labels at one coarse-graining depth."""

    samples: list[MPS]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.ndim != 1 or len(self.labels) != len(self.samples):
            raise DimensionError("labels must be one scalar per sample")
        if self.samples:
            n = len(self.samples[0])
            if any(len(s) != n for s in self.samples):
                raise DimensionError("samples at one scale must share a length")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def n_sites(self) -> int:
        return len(self.samples[0]) if self.samples else 0


@dataclass
class ScaleCache:
    """Ladder of ScaleData from finest (index 0) to coarsest, plus settings."""

    scales: list[ScaleData]
    delta_data: float = 1e-12
    chi_data: int | None = 16
    fingerprint: str = ""

    def __post_init__(self):
        if not self.scales:
            raise ArgumentError("a cache needs at least one scale")
        for i in range(len(self.scales) - 1):
            if self.scales[i].n_sites != 2 * self.scales[i + 1].n_sites:
                raise DimensionError("scale widths must halve at each level")
            if not np.array_equal(self.scales[i].labels, self.scales[i + 1].labels):
                raise DataError("labels must be identical across scales")

    @property
    def n_scales(self) -> int:
        return len(self.scales)


def coarse_grain_dataset(samples: list[MPS], labels, n_layers: int,
                         delta_data: float = 1e-12, chi_data: int | None = 16,
                         threads: int = 1, fingerprint: str = "") -> ScaleCache:
    """Coarse-grain every sample through n_layers and collect the ladder."""
    labels = np.asarray(labels, dtype=np.float64)
    if not samples:
        raise ArgumentError("empty dataset")
    if len(labels) != len(samples):
        raise DimensionError("labels must be one scalar per sample")
    ladders = thread_map(
        lambda s: coarse_grain_sample(s, n_layers, delta_data, chi_data),
        samples, threads)
    scales = [ScaleData([lad[level] for lad in ladders], labels.copy())
              for level in range(n_layers + 1)]
    return ScaleCache(scales, delta_data, chi_data, fingerprint)


# On-disk layout: manifest.json plus one binary file per scale holding the
# sample states in chain order.
_CACHE_FORMAT = "wmera-cache"
_CACHE_VERSION = 1


def save_cache(cache: ScaleCache, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scales_meta = []
    for level, sd in enumerate(cache.scales):
        name = f"scale_{level:03d}.bin"
        path = directory / name
        with open(path, "wb") as f:
            for sample in sd.samples:
                write_mps_record(f, sample)
        scales_meta.append({
            "file": name,
            "n_sites": sd.n_sites,
            "n_samples": sd.n_samples,
            "sha256": sha256_file(path),
        })
    manifest = {
        "format": _CACHE_FORMAT,
        "version": _CACHE_VERSION,
        "fingerprint": cache.fingerprint,
        "delta_data": cache.delta_data,
        "chi_data": cache.chi_data,
        "labels": [float(y) for y in cache.scales[0].labels],
        "scales": scales_meta,
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def read_cache_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise StateError(f"no cache manifest at {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if manifest.get("format") != _CACHE_FORMAT:
        raise FormatError(f"{path}: not a cache manifest")
    if manifest.get("version") != _CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {manifest.get('version')}")
    return manifest


def load_cache(directory) -> ScaleCache:
    """Load and verify a cache; checksum mismatches are hard errors."""
    directory = Path(directory)
    manifest = read_cache_manifest(directory)
    labels = np.asarray(manifest["labels"], dtype=np.float64)
    scales = []
    for meta in manifest["scales"]:
        path = directory / meta["file"]
        if not path.is_file():
            raise StateError(f"cache file missing: {path}")
        digest = sha256_file(path)
        if digest != meta["sha256"]:
            raise DataError(f"checksum mismatch for {path}: manifest says "
                            f"{meta['sha256'][:12]}..., file is {digest[:12]}...")
        samples = []
        with open(path, "rb") as f:
            for _ in range(meta["n_samples"]):
                samples.append(read_mps_record(f))
        if any(len(s) != meta["n_sites"] for s in samples):
            raise FormatError(f"{path}: sample width disagrees with manifest")
        scales.append(ScaleData(samples, labels.copy()))
    chi = manifest["chi_data"]
    return ScaleCache(scales, float(manifest["delta_data"]),
                      None if chi is None else int(chi),
                      manifest.get("fingerprint", ""))
