"""Versioned JSON model serialization and the trained-model bundle.

One format covers interval models and the probabilistic baselines, tagged
by kind. Tensors are stored as row-major nested lists; documents are
written with sorted keys so identical models hash identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import (
    VariationalPosterior,
    bnn_predict,
    ensemble_predict,
    gaussian_simulate,
    mcdropout_predict,
    gaussian_pi,
)
from .dataio import NormalizationStats
from .errors import DataError
from .nets import IntervalSeries, ModelSpec, UncertaintyParams, simulate

__all__ = ["FORMAT_VERSION", "ModelBundle", "save_model", "load_model"]

FORMAT_VERSION = 1


@dataclass
class ModelBundle:
    """Everything needed to reproduce predictions: architecture, parameters,
    normalization, and training provenance."""

    kind: str  # "interval" | "bnn" | "mcdropout" | "ensemble"
    spec: ModelSpec
    norm: NormalizationStats
    training: dict = field(default_factory=dict)
    theta: dict[str, np.ndarray] | None = None
    delta: UncertaintyParams | None = None
    posterior: VariationalPosterior | None = None
    members: list[dict[str, np.ndarray]] | None = None
    baseline: dict = field(default_factory=dict)

    @property
    def has_intervals(self) -> bool:
        return self.kind != "interval" or self.delta is not None

    def predict_normalized(self, u: np.ndarray, y1: float, seed: int = 0) -> IntervalSeries:
        """Closed-loop prediction on normalized data, dispatched by kind."""
        alpha = self.spec.alpha
        if self.kind == "interval":
            return simulate(self.spec, self.theta, self.delta, u, y1)
        if self.kind == "bnn":
            return bnn_predict(
                self.posterior, self.spec, u, y1, self.baseline["samples"], alpha, seed
            )
        if self.kind == "mcdropout":
            if self.baseline["dropout"] > 0.0:
                return mcdropout_predict(
                    self.theta, self.spec, u, y1,
                    self.baseline["dropout"], self.baseline["samples"], alpha, seed,
                )
            mu, var = gaussian_simulate(self.spec, self.theta, u, y1)
            lo, hi = gaussian_pi(mu, np.sqrt(var), alpha)
            return IntervalSeries(mu, lo, hi)
        if self.kind == "ensemble":
            return ensemble_predict(self.members, self.spec, u, y1, alpha)
        raise DataError(f"unknown model kind {self.kind!r}")


def _tensors_to_json(tensors: dict[str, np.ndarray]) -> dict:
    return {k: v.tolist() for k, v in sorted(tensors.items())}


def _tensors_from_json(data: dict) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=np.float64) for k, v in data.items()}


def save_model(path, bundle: ModelBundle) -> None:
    doc: dict = {
        "format_version": FORMAT_VERSION,
        "kind": bundle.kind,
        "spec": bundle.spec.to_dict(),
        "normalization": bundle.norm.to_dict(),
        "training": bundle.training,
        "baseline": bundle.baseline,
    }
    if bundle.theta is not None:
        doc["params"] = _tensors_to_json(bundle.theta)
    if bundle.delta is not None:
        doc["delta_raw"] = {
            "lower": _tensors_to_json(bundle.delta.lower),
            "upper": _tensors_to_json(bundle.delta.upper),
        }
    if bundle.posterior is not None:
        doc["posterior"] = {
            "mean": _tensors_to_json(bundle.posterior.mean),
            "rho_raw": _tensors_to_json(bundle.posterior.rho_raw),
        }
    if bundle.members is not None:
        doc["members"] = [_tensors_to_json(m) for m in bundle.members]
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_model(path) -> ModelBundle:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid model JSON ({exc.msg})") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported model format version {version}")
    bundle = ModelBundle(
        kind=doc["kind"],
        spec=ModelSpec.from_dict(doc["spec"]),
        norm=NormalizationStats.from_dict(doc["normalization"]),
        training=doc.get("training", {}),
        baseline=doc.get("baseline", {}),
    )
    if "params" in doc:
        bundle.theta = _tensors_from_json(doc["params"])
    if "delta_raw" in doc:
        bundle.delta = UncertaintyParams(
            _tensors_from_json(doc["delta_raw"]["lower"]),
            _tensors_from_json(doc["delta_raw"]["upper"]),
        )
    if "posterior" in doc:
        bundle.posterior = VariationalPosterior(
            _tensors_from_json(doc["posterior"]["mean"]),
            _tensors_from_json(doc["posterior"]["rho_raw"]),
        )
    if "members" in doc:
        bundle.members = [_tensors_from_json(m) for m in doc["members"]]
    return bundle
