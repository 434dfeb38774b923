"""Parameter-uncertainty analysis: elementwise elasticity (interval width
over crisp magnitude), channel-wise projections onto input channels, and
CSV export laid out for heatmap rendering.

Near-zero crisp parameters with nonzero width have no meaningful ratio;
they are flagged as unbounded in a sidecar rather than reported as huge
numbers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .intervals import IntervalMatrix
from .nets import ModelSpec, lag_indices

__all__ = [
    "MAGNITUDE_FLOOR",
    "ElasticityReport",
    "elasticity",
    "channelwise",
    "input_channel_labels",
    "export_heatmap",
]

MAGNITUDE_FLOOR = 1e-8


@dataclass
class ElasticityReport:
    """Per-tensor elasticity matrices plus tensor-level norm ratios."""

    ratios: dict[str, np.ndarray]
    unbounded: dict[str, np.ndarray]
    tensor_level: dict[str, float]
    metadata: dict = field(default_factory=dict)


def elasticity(
    iv_params: dict[str, IntervalMatrix],
    theta: dict[str, np.ndarray],
    metadata: dict | None = None,
) -> ElasticityReport:
    """Width-to-magnitude ratio per element, and Frobenius-norm ratio per
    tensor. Entries with |theta| below the floor and positive width are
    flagged unbounded (their reported ratio uses the floored magnitude)."""
    ratios, unbounded, tensor_level = {}, {}, {}
    for name, iv in iv_params.items():
        value = theta[name]
        if iv.shape != value.shape:
            raise ValueError(f"shape mismatch for {name}: {iv.shape} vs {value.shape}")
        width = np.abs(iv.hi - iv.lo)
        mag = np.abs(value)
        ratios[name] = width / np.maximum(mag, MAGNITUDE_FLOOR)
        unbounded[name] = (mag < MAGNITUDE_FLOOR) & (width > 0.0)
        denom = float(np.linalg.norm(value))
        tensor_level[name] = float(np.linalg.norm(width) / max(denom, MAGNITUDE_FLOOR))
    return ElasticityReport(ratios, unbounded, tensor_level, metadata or {})


def channelwise(ratio_matrix: np.ndarray) -> np.ndarray:
    """Sum elasticity over output channels for each input channel.

    Columns are input channels; exact summation (fsum) so the projection
    reproduces any reordering of the same addends bit for bit.
    """
    ratio_matrix = np.asarray(ratio_matrix, dtype=np.float64)
    return np.array([math.fsum(ratio_matrix[:, j]) for j in range(ratio_matrix.shape[1])])


def input_channel_labels(spec: ModelSpec) -> tuple[list[str], list[int]]:
    """Display labels for the first layer's input channels.

    Channels are presented output-lag first (y(k-1), ..., then the input
    lags), matching the channel numbering used in the uncertainty heatmaps;
    the returned permutation maps display position -> model channel index.
    """
    u_idx, y_idx = lag_indices(spec, 0)  # offsets relative to k
    u_labels = [f"u(k{off})" if off else "u(k)" for off in u_idx]
    y_labels = [f"y(k{off})" for off in y_idx]
    labels = y_labels + u_labels
    perm = list(range(spec.n_x + 1, spec.n_x + 1 + spec.n_y)) + list(range(spec.n_x + 1))
    return labels, perm


def _layer_tensors(report: ElasticityReport) -> dict[str, dict[str, str]]:
    """Group weight/bias tensor names by layer prefix."""
    layers: dict[str, dict[str, str]] = {}
    for name in report.ratios:
        layer, leaf = name.split(".", 1)
        layers.setdefault(layer, {})[leaf] = name
    return layers


def export_heatmap(report: ElasticityReport, out_dir, spec: ModelSpec) -> dict:
    """Write one heatmap CSV per weight tensor (bias appended as the last
    column) and one channel-wise CSV per tensor, plus an index JSON.

    First-layer columns that consume the regression vector are permuted into
    display order (output lags first) so the labels match the cells.
    """
    if not report.ratios:
        raise ValueError("empty elasticity report: model has no parameterized layers")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lag_labels, lag_perm = input_channel_labels(spec)
    index: dict = {"files": [], "tensor_level": report.tensor_level, "metadata": report.metadata}
    for layer, leaves in sorted(_layer_tensors(report).items()):
        weights = sorted(leaf for leaf in leaves if not leaf.startswith("b"))
        for leaf in weights:
            name = leaves[leaf]
            ratio = report.ratios[name]
            # The gate bias belongs with the input-facing weight, not the
            # recurrent one, so it is appended to W* heatmaps only.
            bias_name = leaves.get("b" + leaf[1:]) if leaf.startswith("W") else None
            bias_ratio = report.ratios[bias_name][:, 0] if bias_name else None
            takes_regression = layer in ("h0", "l0") and leaf.startswith("W")
            if takes_regression:
                labels = list(lag_labels)
                ratio = ratio[:, lag_perm]
            else:
                labels = [f"in{j + 1}" for j in range(ratio.shape[1])]
            if bias_ratio is not None:
                labels.append("bias")
                matrix = np.column_stack([ratio, bias_ratio])
            else:
                matrix = ratio
            heat_path = out_dir / f"heatmap_{name.replace('.', '_')}.csv"
            _write_matrix_csv(heat_path, labels, matrix)
            chan_path = out_dir / f"channelwise_{name.replace('.', '_')}.csv"
            channel_row = channelwise(ratio)
            if bias_ratio is not None:
                channel_row = np.append(channel_row, math.fsum(bias_ratio))
            _write_matrix_csv(chan_path, labels, channel_row[None, :])
            index["files"].append(
                {
                    "tensor": name,
                    "heatmap": heat_path.name,
                    "channelwise": chan_path.name,
                    "columns": labels,
                    "unbounded_entries": int(report.unbounded[name].sum()),
                }
            )
    index_path = out_dir / "index.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True))
    return index


def _write_matrix_csv(path: Path, labels: list[str], matrix: np.ndarray) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(labels)
        for row in np.atleast_2d(matrix):
            writer.writerow([repr(float(v)) for v in row])
