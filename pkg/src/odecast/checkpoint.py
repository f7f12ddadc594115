"""Versioned model checkpoints.

A checkpoint is a zip of ``.npy`` members (readable with ``numpy.load``)
holding every named parameter plus a JSON metadata record: format version,
schedule settings, architecture settings, a content hash of the graph the
model was trained against, and the parameter shape manifest. Loading
validates all of it before any tensor is copied.

The writer fixes zip entry timestamps, so saving the same model twice
produces byte-identical files; wall-clock state never leaks into artifacts.
"""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np
import torch

from .denoiser import FactoredSpectralDenoiser, FsdConfig
from .errors import ConfigError
from .graph import SensorGraph
from .schedule import NoiseSchedule, linear_schedule

FORMAT_VERSION = 1
_EPOCH_STAMP = (1980, 1, 1, 0, 0, 0)


def _write_deterministic_zip(path, arrays: dict[str, np.ndarray]) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(
                buf, np.ascontiguousarray(arrays[key]), allow_pickle=False
            )
            info = zipfile.ZipInfo(key + ".npy", date_time=_EPOCH_STAMP)
            zf.writestr(info, buf.getvalue())


def save_checkpoint(
    path,
    model: FactoredSpectralDenoiser,
    schedule: NoiseSchedule,
    graph: SensorGraph,
    extra: dict | None = None,
    optimizer: torch.optim.Optimizer | None = None,
) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "schedule": schedule.config_dict(),
        "model_config": model.config.to_dict(),
        "graph_hash": graph.hash(),
        "manifest": {name: list(shape) for name, shape in model.parameter_manifest().items()},
        "extra": extra or {},
    }
    arrays: dict[str, np.ndarray] = {
        f"param/{name}": p.detach().numpy() for name, p in model.named_parameters()
    }
    if optimizer is not None:
        for name, p in model.named_parameters():
            state = optimizer.state.get(p)
            if not state:
                continue
            arrays[f"opt/{name}/exp_avg"] = state["exp_avg"].detach().numpy()
            arrays[f"opt/{name}/exp_avg_sq"] = state["exp_avg_sq"].detach().numpy()
            arrays[f"opt/{name}/step"] = np.asarray(float(state["step"]))
        meta["has_optimizer"] = True
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    _write_deterministic_zip(path, arrays)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Raw read: metadata dict plus named parameter arrays."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            if "meta" not in archive.files:
                raise ConfigError(f"{path}: not a checkpoint (missing metadata member)")
            meta = json.loads(archive["meta"].item())
            params = {
                key[len("param/") :]: archive[key]
                for key in archive.files
                if key.startswith("param/")
            }
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise ConfigError(f"{path}: unreadable checkpoint: {exc}") from exc
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(
            f"{path}: unsupported checkpoint format version {version!r} "
            f"(this build reads version {FORMAT_VERSION})"
        )
    return meta, params


def restore_model(
    path, graph: SensorGraph
) -> tuple[FactoredSpectralDenoiser, NoiseSchedule, dict]:
    """Rebuild a denoiser from a checkpoint, validating the shape manifest
    and that the provided graph is the one the model was trained on."""
    meta, params = load_checkpoint(path)
    if meta["graph_hash"] != graph.hash():
        raise ConfigError(
            f"{path}: checkpoint was trained on a different graph "
            f"(hash {meta['graph_hash'][:12]}..., got {graph.hash()[:12]}...)"
        )
    config = FsdConfig.from_dict(meta["model_config"])
    model = FactoredSpectralDenoiser(config, graph)
    manifest = model.parameter_manifest()
    recorded = {name: tuple(shape) for name, shape in meta["manifest"].items()}
    if recorded != manifest:
        raise ConfigError(f"{path}: checkpoint manifest does not match the architecture")
    missing = sorted(set(manifest) - set(params))
    extra_keys = sorted(set(params) - set(manifest))
    if missing or extra_keys:
        raise ConfigError(
            f"{path}: parameter set mismatch (missing {missing}, unexpected {extra_keys})"
        )
    for name, arr in params.items():
        if tuple(arr.shape) != manifest[name]:
            raise ConfigError(
                f"{path}: parameter {name} has shape {tuple(arr.shape)}, "
                f"manifest says {manifest[name]}"
            )
    with torch.no_grad():
        for name, p in model.named_parameters():
            p.copy_(torch.from_numpy(np.ascontiguousarray(params[name])))
    sched_cfg = meta["schedule"]
    schedule = linear_schedule(
        steps=sched_cfg["steps"],
        beta_end=sched_cfg["beta_end"],
        beta_start=sched_cfg["beta_start"],
    )
    return model, schedule, meta


def restore_optimizer(
    path, model: FactoredSpectralDenoiser, optimizer: torch.optim.Optimizer
) -> None:
    """Load saved Adam moments into a freshly built optimizer, so training
    resumed from the checkpoint continues exactly where it stopped."""
    meta, _ = load_checkpoint(path)
    if not meta.get("has_optimizer"):
        raise ConfigError(f"{path}: checkpoint carries no optimizer state to resume from")
    with np.load(path, allow_pickle=False) as archive:
        for name, p in model.named_parameters():
            key = f"opt/{name}/exp_avg"
            if key not in archive.files:
                continue
            optimizer.state[p] = {
                "step": torch.tensor(float(archive[f"opt/{name}/step"].reshape(-1)[0])),
                "exp_avg": torch.from_numpy(np.ascontiguousarray(archive[key])),
                "exp_avg_sq": torch.from_numpy(
                    np.ascontiguousarray(archive[f"opt/{name}/exp_avg_sq"])
                ),
            }
