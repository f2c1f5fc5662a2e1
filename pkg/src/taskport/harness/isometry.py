"""Construction of targets whose activations are exact orthonormal images of a
source model's, giving transport a case with a known right answer."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from ..linalg import random_orthonormal_rows
from ..model import Checkpoint, LayerSpec
from ..transport import ProcrustesMap

__all__ = ["build_isometric_target"]


def build_isometric_target(theta_a: Checkpoint, widths=None, seed: int = 0,
                           maps=None, keep_final: bool = False):
    """Rotate a linear stack into wider coordinates with known orthonormal maps.

    For every interface l (layer inputs for l=0, layer l-1 outputs otherwise) a
    row-orthonormal map t_l of shape (d_a_l, widths[l]) is sampled, and target
    weights are set to ``t_{l+1}.T @ w_a @ t_l`` (biases ride t_{l+1} alone), so
    the target's layer activations equal the source's mapped through t exactly,
    provided inputs are rendered through t_0. Only identity activations keep
    that exactness, so ReLU layers are rejected.

    widths lists the target dimension per interface (depth+1 entries, default:
    same as the source). keep_final pins the last interface map to the identity
    so any readout on the final features is preserved. Explicit ``maps``
    override the sampling. Returns (theta_b, per-layer ProcrustesMap list with
    zero residuals).
    """
    for idx, spec in enumerate(theta_a.layer_specs):
        if spec.activation != "identity":
            raise DimensionError(
                f"isometric construction needs identity activations; layer {idx} uses relu"
            )
    dims_a = [theta_a.layer_specs[0].d_in] + [s.d_out for s in theta_a.layer_specs]
    if widths is None:
        widths = list(dims_a)
    widths = [int(w) for w in widths]
    if len(widths) != len(dims_a):
        raise DimensionError(
            f"widths must give one dimension per interface ({len(dims_a)}), got {len(widths)}"
        )
    for l, (da, wb) in enumerate(zip(dims_a, widths)):
        if wb < da:
            raise DimensionError(
                f"interface {l}: target width {wb} is narrower than the source's {da}"
            )
    if keep_final and widths[-1] != dims_a[-1]:
        raise DimensionError(
            f"keep_final needs matching final widths, got {dims_a[-1]} vs {widths[-1]}"
        )

    if maps is None:
        maps = []
        for l, (da, wb) in enumerate(zip(dims_a, widths)):
            if keep_final and l == len(dims_a) - 1:
                maps.append(np.eye(da))
            else:
                maps.append(
                    random_orthonormal_rows(da, wb, np.random.SeedSequence((int(seed), l)))
                )
    else:
        maps = [np.asarray(m, dtype=np.float64) for m in maps]
        if len(maps) != len(dims_a):
            raise DimensionError(f"expected {len(dims_a)} maps, got {len(maps)}")
        for l, m in enumerate(maps):
            if m.shape != (dims_a[l], widths[l]):
                raise DimensionError(
                    f"map {l} has shape {m.shape}, expected ({dims_a[l]}, {widths[l]})"
                )
            if not np.allclose(m @ m.T, np.eye(m.shape[0]), atol=1e-10):
                raise DimensionError(f"map {l} does not have orthonormal rows")

    specs_b, weights_b, biases_b = [], [], []
    for idx, spec in enumerate(theta_a.layer_specs):
        t_in, t_out = maps[idx], maps[idx + 1]
        specs_b.append(
            LayerSpec(d_in=widths[idx], d_out=widths[idx + 1],
                      has_bias=spec.has_bias, activation="identity")
        )
        weights_b.append(t_out.T @ theta_a.weights[idx] @ t_in)
        biases_b.append(None if theta_a.biases[idx] is None else t_out.T @ theta_a.biases[idx])
    theta_b = Checkpoint(
        layer_specs=specs_b, weights=weights_b, biases=biases_b,
        meta={"construction": "isometric"},
    )
    true_maps = [
        ProcrustesMap(in_map=maps[idx], out_map=maps[idx + 1], in_residual=0.0, out_residual=0.0)
        for idx in range(theta_a.depth)
    ]
    return theta_b, true_maps
