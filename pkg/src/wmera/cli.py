"""Command-line front end: preprocess, train, finegrain, eval, pipeline.

Configuration is a plain key = value file; the --threads, --seed, and
--output flags override it. Every command writes a resolved-config snapshot
next to its artifacts, and metrics are JSON lines with one object per sweep.
Cache location can be redirected with the WMERA_CACHE_DIR environment
variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .coarsegrain import (
    ScaleCache,
    coarse_grain_dataset,
    load_cache,
    read_cache_manifest,
    save_cache,
)
from .errors import ArgumentError, DataError, FormatError, StateError, WmeraError
from .finegrain import fine_grain_weights
from .ingest import (
    RawSample,
    apply_scaler,
    encode_sample,
    fit_scaler,
    haar_preprocess,
    make_windows,
    pad_to_pow2,
    read_series_csv,
    read_wav,
)
from .mps import load_mps, save_mps
from .trainer import TrainConfig, evaluate, train
from .util import canonical_json, sha256_file, sha256_hex
from .wavelet import build_daub4_layer

CACHE_ENV_VAR = "WMERA_CACHE_DIR"

_TRAIN_KEYS = {
    "n_sweeps": int,
    "delta_weights": float,
    "chi_max": int,
    "lambda": float,
    "cg_max_iters": int,
    "cg_tol": float,
    "init_bond": int,
    "init_scale": float,
    "seed": int,
}

_PIPELINE_KEYS = {
    "manifest": str,
    "output": str,
    "pad_to": int,
    "n_h2": int,
    "n_d4_layers": int,
    "fine_grain_to": int,
    "delta_data": float,
    "chi_data": int,
    "threads": int,
}


@dataclass
class PipelineConfig:
    """Everything a run needs, resolved from file plus flags."""

    manifest_path: Path
    output: Path
    task: str
    manifest: dict
    pad_to: int | None = None
    n_h2: int = 0
    n_d4_layers: int = 1
    fine_grain_to: int | None = None
    delta_data: float = 1e-12
    chi_data: int = 16
    threads: int = 1
    train_base: TrainConfig = field(default_factory=TrainConfig)
    train_overrides: dict[int, dict] = field(default_factory=dict)

    def __post_init__(self):
        if self.fine_grain_to is None:
            self.fine_grain_to = 0  # descend through every scale by default
        if self.n_h2 < 0 or self.n_d4_layers < 0:
            raise ArgumentError("n_h2 and n_d4_layers must be >= 0")
        if not 0 <= self.fine_grain_to <= self.n_d4_layers:
            raise ArgumentError(f"fine_grain_to must lie in [0, {self.n_d4_layers}]")
        if self.threads < 1:
            raise ArgumentError("threads must be >= 1")
        if self.delta_data < 0 or self.chi_data < 1:
            raise ArgumentError("delta_data must be >= 0 and chi_data >= 1")
        if self.pad_to is not None and (self.pad_to < 4 or self.pad_to & (self.pad_to - 1)):
            raise ArgumentError(f"pad_to must be a power of two >= 4, got {self.pad_to}")

    def train_config(self, scale: int) -> TrainConfig:
        if scale in self.train_overrides:
            return replace(self.train_base, **self.train_overrides[scale])
        return self.train_base

    @property
    def cache_root(self) -> Path:
        env = os.environ.get(CACHE_ENV_VAR)
        return Path(env) if env else self.output / "cache"


def parse_kv_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ArgumentError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArgumentError(f"{path}: line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _convert(key: str, value: str, kind):
    try:
        return kind(value)
    except ValueError:
        raise ArgumentError(f"config key {key!r}: cannot parse {value!r} "
                            f"as {kind.__name__}") from None


def resolve_config(args) -> PipelineConfig:
    raw = parse_kv_file(args.config)
    base_dir = Path(args.config).resolve().parent

    plain: dict[str, object] = {}
    train_kwargs: dict[str, object] = {}
    overrides: dict[int, dict] = {}
    for key, value in raw.items():
        name, _, scale_part = key.partition("@")
        if scale_part:
            if name not in _TRAIN_KEYS:
                raise ArgumentError(f"unknown per-scale configuration key {key!r}")
            scale = _convert(key, scale_part, int)
            field_name = "lam" if name == "lambda" else name
            overrides.setdefault(scale, {})[field_name] = _convert(key, value, _TRAIN_KEYS[name])
        elif name in _TRAIN_KEYS:
            field_name = "lam" if name == "lambda" else name
            train_kwargs[field_name] = _convert(key, value, _TRAIN_KEYS[name])
        elif name in _PIPELINE_KEYS:
            plain[name] = _convert(key, value, _PIPELINE_KEYS[name])
        else:
            raise ArgumentError(f"unknown configuration key {name!r}")

    if getattr(args, "seed", None) is not None:
        train_kwargs["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        plain["threads"] = args.threads
    if getattr(args, "output", None) is not None:
        plain["output"] = args.output
    if "manifest" not in plain:
        raise ArgumentError("configuration must set 'manifest'")
    if "output" not in plain:
        raise ArgumentError("configuration must set 'output' (or pass --output)")

    manifest_path = (base_dir / str(plain.pop("manifest"))).resolve()
    output = Path(str(plain.pop("output")))
    if not output.is_absolute():
        output = (base_dir / output).resolve()
    manifest = _load_manifest(manifest_path)
    return PipelineConfig(
        manifest_path=manifest_path,
        output=output,
        task=manifest["task"],
        manifest=manifest,
        train_base=TrainConfig(**train_kwargs),
        train_overrides=overrides,
        **plain,
    )


def _load_manifest(path: Path) -> dict:
    if not path.is_file():
        raise ArgumentError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    task = manifest.get("task")
    if task == "classification":
        samples = manifest.get("samples")
        if not isinstance(samples, list) or not samples:
            raise FormatError(f"{path}: classification manifest needs a 'samples' list")
        for i, entry in enumerate(samples):
            if "path" not in entry or "label" not in entry:
                raise FormatError(f"{path}: sample {i} needs 'path' and 'label'")
            if float(entry["label"]) not in (-1.0, 1.0):
                raise DataError(f"{path}: sample {i} label must be +1 or -1")
            if entry.get("split", "train") not in ("train", "test"):
                raise FormatError(f"{path}: sample {i} split must be 'train' or 'test'")
    elif task == "regression":
        for key in ("series", "p", "fit_range"):
            if key not in manifest:
                raise FormatError(f"{path}: regression manifest needs {key!r}")
        lo, hi = manifest["fit_range"]
        if not 0 <= int(lo) < int(hi):
            raise FormatError(f"{path}: fit_range must satisfy 0 <= lo < hi")
    else:
        raise FormatError(f"{path}: task must be 'classification' or 'regression'")
    return manifest


def _read_series_file(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".wav":
        return read_wav(path)
    if path.suffix.lower() == ".csv":
        return read_series_csv(path)
    raise FormatError(f"{path}: unsupported sample format {path.suffix!r}")


def _referenced_files(cfg: PipelineConfig) -> list[Path]:
    base = cfg.manifest_path.parent
    if cfg.task == "classification":
        return [base / entry["path"] for entry in cfg.manifest["samples"]]
    return [base / cfg.manifest["series"]]


def load_raw_datasets(cfg: PipelineConfig) -> tuple[list[RawSample], list[RawSample]]:
    """Ingest, pad, and Haar-reduce the manifest's data into train/test lists."""
    train_rows: list[RawSample] = []
    test_rows: list[RawSample] = []
    if cfg.task == "classification":
        base = cfg.manifest_path.parent
        for entry in cfg.manifest["samples"]:
            path = base / entry["path"]
            values = _read_series_file(path)
            if cfg.pad_to is not None:
                values = pad_to_pow2(values, cfg.pad_to)
            values = haar_preprocess(values, cfg.n_h2)
            row = RawSample(values, float(entry["label"]), str(entry["path"]))
            (test_rows if entry.get("split", "train") == "test" else train_rows).append(row)
    else:
        base = cfg.manifest_path.parent
        series = read_series_csv(base / cfg.manifest["series"],
                                 column=cfg.manifest.get("column"))
        p = int(cfg.manifest["p"])
        lo, hi = (int(v) for v in cfg.manifest["fit_range"])
        windows = make_windows(series, p, source_id=Path(cfg.manifest["series"]).stem)
        for start, row in enumerate(windows):
            values = haar_preprocess(row.values, cfg.n_h2)
            row = RawSample(values, row.label, row.source_id)
            # training windows sit entirely inside the fit range; every other
            # start index is held out
            (train_rows if lo <= start and start + p <= hi else test_rows).append(row)
    if not train_rows:
        raise DataError("no training samples after applying the manifest split")
    return train_rows, test_rows


def compute_fingerprint(cfg: PipelineConfig) -> str:
    payload = {
        "version": __version__,
        "manifest_sha256": sha256_file(cfg.manifest_path),
        "files": [sha256_file(p) for p in _referenced_files(cfg)],
        "pad_to": cfg.pad_to,
        "n_h2": cfg.n_h2,
        "n_d4_layers": cfg.n_d4_layers,
        "delta_data": cfg.delta_data,
        "chi_data": cfg.chi_data,
    }
    return sha256_hex(canonical_json(payload).encode())


def _encode_rows(rows: list[RawSample], scaler) -> tuple[list, np.ndarray]:
    states = [encode_sample(apply_scaler(scaler, r.values)) for r in rows]
    labels = np.array([r.label for r in rows])
    return states, labels


def ensure_cache(cfg: PipelineConfig, log=print) -> tuple[ScaleCache, ScaleCache | None]:
    """Load the preprocessing cache, rebuilding it when the fingerprint moved."""
    fingerprint = compute_fingerprint(cfg)
    root = cfg.cache_root
    splits = {}
    reusable = True
    for split in ("train", "test"):
        directory = root / split
        try:
            manifest = read_cache_manifest(directory)
            splits[split] = manifest.get("fingerprint") == fingerprint
        except (StateError, FormatError):
            splits[split] = False
    if splits["train"] and (splits["test"] or not (root / "test").exists()):
        log(f"cache up to date at {root}")
        train_cache = load_cache(root / "train")
        test_cache = load_cache(root / "test") if (root / "test").exists() else None
        return train_cache, test_cache

    log(f"building cache at {root}")
    train_rows, test_rows = load_raw_datasets(cfg)
    scaler = fit_scaler(train_rows)
    train_states, train_labels = _encode_rows(train_rows, scaler)
    train_cache = coarse_grain_dataset(train_states, train_labels, cfg.n_d4_layers,
                                       cfg.delta_data, cfg.chi_data,
                                       threads=cfg.threads, fingerprint=fingerprint)
    save_cache(train_cache, root / "train")
    test_cache = None
    if test_rows:
        test_states, test_labels = _encode_rows(test_rows, scaler)
        test_cache = coarse_grain_dataset(test_states, test_labels, cfg.n_d4_layers,
                                          cfg.delta_data, cfg.chi_data,
                                          threads=cfg.threads, fingerprint=fingerprint)
        save_cache(test_cache, root / "test")
    return train_cache, test_cache


def _load_caches(cfg: PipelineConfig) -> tuple[ScaleCache, ScaleCache | None]:
    root = cfg.cache_root
    if not (root / "train" / "manifest.json").is_file():
        raise StateError(f"no preprocessing cache at {root}; run 'wmera preprocess' first")
    train_cache = load_cache(root / "train")
    test_cache = None
    if (root / "test" / "manifest.json").is_file():
        test_cache = load_cache(root / "test")
    return train_cache, test_cache


def write_snapshot(cfg: PipelineConfig, extra: dict | None = None) -> None:
    """Resolved configuration, one sorted key = value per line."""
    cfg.output.mkdir(parents=True, exist_ok=True)
    tc = cfg.train_base
    entries = {
        "manifest": str(cfg.manifest_path),
        "output": str(cfg.output),
        "task": cfg.task,
        "pad_to": cfg.pad_to,
        "n_h2": cfg.n_h2,
        "n_d4_layers": cfg.n_d4_layers,
        "fine_grain_to": cfg.fine_grain_to,
        "delta_data": cfg.delta_data,
        "chi_data": cfg.chi_data,
        "threads": cfg.threads,
        "n_sweeps": tc.n_sweeps,
        "delta_weights": tc.delta_weights,
        "chi_max": tc.chi_max,
        "lambda": tc.lam,
        "cg_max_iters": tc.cg_max_iters,
        "cg_tol": tc.cg_tol,
        "init_bond": tc.init_bond,
        "init_scale": tc.init_scale,
        "seed": tc.seed,
        "version": __version__,
    }
    for scale, kwargs in sorted(cfg.train_overrides.items()):
        for name, value in kwargs.items():
            key = "lambda" if name == "lam" else name
            entries[f"{key}@{scale}"] = value
    if extra:
        entries.update(extra)
    lines = [f"{k} = {entries[k]}" for k in sorted(entries)]
    (cfg.output / "config.snapshot").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _metrics_writer(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = open(path, "w", encoding="utf-8")

    def emit(scale: int, stats_list) -> None:
        for st in stats_list:
            record = {
                "scale": scale,
                "sweep": st.sweep_index,
                "cost": st.cost,
                "max_bond": st.max_bond,
                "train_metric": st.train_metric,
                "truncated_weight": st.truncated_weight,
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")
        handle.flush()

    return handle, emit


def _model_path(cfg: PipelineConfig, scale: int, init: bool = False) -> Path:
    suffix = ".init.mps" if init else ".mps"
    return cfg.output / f"model_scale{scale}{suffix}"


def cmd_preprocess(cfg: PipelineConfig, args) -> int:
    write_snapshot(cfg)
    train_cache, test_cache = ensure_cache(cfg)
    widths = [sd.n_sites for sd in train_cache.scales]
    print(f"train: {train_cache.scales[0].n_samples} samples, scale widths {widths}")
    if test_cache is not None:
        print(f"test: {test_cache.scales[0].n_samples} samples")
    return 0


def cmd_train(cfg: PipelineConfig, args) -> int:
    write_snapshot(cfg)
    train_cache, _ = _load_caches(cfg)
    scale = cfg.n_d4_layers if args.scale is None else args.scale
    if not 0 <= scale < train_cache.n_scales:
        raise ArgumentError(f"scale {scale} not in cache (0..{train_cache.n_scales - 1})")
    w0 = None
    if args.init is not None:
        w0 = load_mps(args.init)
    tc = cfg.train_config(scale)
    handle, emit = _metrics_writer(cfg.output / "metrics.jsonl")
    try:
        w, stats = train(train_cache.scales[scale], tc, w0=w0, task=cfg.task,
                         threads=cfg.threads)
        emit(scale, stats)
    finally:
        handle.close()
    save_mps(_model_path(cfg, scale), w)
    print(f"scale {scale}: cost {stats[-1].cost:.6g}, "
          f"train_metric {stats[-1].train_metric:.6g} -> {_model_path(cfg, scale)}")
    return 0


def cmd_finegrain(cfg: PipelineConfig, args) -> int:
    write_snapshot(cfg)
    scale = cfg.n_d4_layers if args.scale is None else args.scale
    if scale < 1:
        raise ArgumentError("finegrain needs --scale >= 1")
    source = _model_path(cfg, scale)
    if not source.is_file():
        raise StateError(f"no trained model at {source}; run 'wmera train' first")
    w = load_mps(source)
    tc = cfg.train_config(scale - 1)
    layer = build_daub4_layer(2 * len(w))
    fine, err = fine_grain_weights(w, layer, tc.delta_weights, tc.chi_max)
    target = _model_path(cfg, scale - 1, init=True)
    save_mps(target, fine)
    print(f"scale {scale} -> {scale - 1}: truncated weight {err:.3g} -> {target}")
    return 0


def cmd_eval(cfg: PipelineConfig, args) -> int:
    write_snapshot(cfg)
    train_cache, test_cache = _load_caches(cfg)
    scale = cfg.n_d4_layers if args.scale is None else args.scale
    path = _model_path(cfg, scale)
    if not path.is_file():
        raise StateError(f"no trained model at {path}; run 'wmera train' first")
    w = load_mps(path)
    report = _eval_report(cfg, w, scale, train_cache, test_cache)
    out = cfg.output / f"eval_scale{scale}.json"
    out.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(report, sort_keys=True))
    return 0


def _eval_report(cfg, w, scale, train_cache, test_cache) -> dict:
    report = {
        "task": cfg.task,
        "scale": scale,
        "n_sites": train_cache.scales[scale].n_sites,
        "train_metric": evaluate(w, train_cache.scales[scale], cfg.task),
        "test_metric": (evaluate(w, test_cache.scales[scale], cfg.task)
                        if test_cache is not None else None),
    }
    return report


def cmd_pipeline(cfg: PipelineConfig, args) -> int:
    write_snapshot(cfg)
    train_cache, test_cache = ensure_cache(cfg)
    handle, emit = _metrics_writer(cfg.output / "metrics.jsonl")
    summary = []
    w = None
    try:
        for scale in range(cfg.n_d4_layers, cfg.fine_grain_to - 1, -1):
            tc = cfg.train_config(scale)
            if w is not None:
                layer = build_daub4_layer(2 * len(w))
                w, _ = fine_grain_weights(w, layer, tc.delta_weights, tc.chi_max)
            w, stats = train(train_cache.scales[scale], tc, w0=w, task=cfg.task,
                             threads=cfg.threads)
            emit(scale, stats)
            save_mps(_model_path(cfg, scale), w)
            report = _eval_report(cfg, w, scale, train_cache, test_cache)
            report["final_cost"] = stats[-1].cost
            report["model_file"] = _model_path(cfg, scale).name
            summary.append(report)
            print(f"scale {scale}: train_metric {report['train_metric']:.6g}"
                  + (f", test_metric {report['test_metric']:.6g}"
                     if report["test_metric"] is not None else ""))
    finally:
        handle.close()
    payload = {"task": cfg.task, "scales": summary}
    (cfg.output / "summary.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return 0


_COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "finegrain": cmd_finegrain,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wmera",
        description="Multi-scale tensor-network learning over wavelet-coarse-grained signals.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("preprocess", "encode and coarse-grain the manifest's data into the cache"),
        ("train", "train the weight chain at one scale"),
        ("finegrain", "project a trained model one scale finer"),
        ("eval", "evaluate a trained model on the cached splits"),
        ("pipeline", "preprocess, then train from coarsest down to fine_grain_to"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--output", help="override the output directory")
        p.add_argument("--threads", type=int, help="worker threads for per-sample work")
        p.add_argument("--seed", type=int, help="override the training seed")
        if name in ("train", "finegrain", "eval"):
            p.add_argument("--scale", type=int, help="scale index (default: coarsest)")
        if name == "train":
            p.add_argument("--init", help="warm-start model file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return _COMMANDS[args.command](cfg, args)
    except WmeraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
