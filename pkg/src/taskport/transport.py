"""Transport of task-specific weight updates between models of different widths.

The update of a layer is characterized by the coupling it induces between the
layer's input activations and its pre-update output activations on a shared
calibration set. Transport finds, for each side of the layer, the orthonormal
map that best aligns the source model's activations with the target model's
(an orthogonal Procrustes problem solved by SVD of the cross-covariance), then
conjugates the source update with those maps:

    new_update = out_map.T @ source_update @ in_map

with maps stored source -> target as (d_src, d_dst) row-orthonormal matrices.
Conjugation with row-orthonormal maps preserves the Frobenius norm of the
update exactly; ``transport_update`` asserts both the output shape and that
identity. When the source side is wider than the target side the Procrustes
roles are swapped internally and the transposed map is applied (the norm
identity no longer holds in that direction, by necessity).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DepthMismatchError, DimensionError, TaskportError
from .linalg import as_matrix, require_finite, svd, DEFAULT_RCOND
from .model import (
    ActivationRecord,
    Checkpoint,
    TaskVector,
    apply_update,
    forward_collect,
    task_vector,
)
from .seqalign import STRATEGIES, align_sequence, flatten_tokens

__all__ = [
    "METHODS",
    "ProcrustesMap",
    "TransportConfig",
    "cross_covariance",
    "procrustes_align",
    "procrustes_maps",
    "transport_update",
    "transport_bias",
    "bilinear_residual",
    "depth_expand",
    "transport_task_vector",
    "transport_model",
]

METHODS = ("theseus", "pinv", "pinv_tikhonov", "zero_pad", "random", "random_source")

# Above this many calibration rows the coupling residual is evaluated through
# feature-space Gram matrices instead of materializing the rows x rows coupling.
NAIVE_RESIDUAL_MAX_ROWS = 512


@dataclass(frozen=True)
class ProcrustesMap:
    """Orthonormal alignment maps for one layer, stored source -> target.

    ``in_map`` is (d_in_src, d_in_dst), ``out_map`` is (d_out_src, d_out_dst);
    both have orthonormal rows (so the source side must not be wider). The
    residuals are the Frobenius misfits ``|h_src @ map - h_dst|`` at the optimum.
    """

    in_map: np.ndarray
    out_map: np.ndarray
    in_residual: float = 0.0
    out_residual: float = 0.0

    def __post_init__(self):
        for name, m in (("in_map", self.in_map), ("out_map", self.out_map)):
            m = as_matrix(m, name)
            if m.shape[0] > m.shape[1]:
                raise DimensionError(
                    f"{name} is {m.shape[0]}x{m.shape[1]}; maps are stored source -> target "
                    f"with the source side no wider than the target side"
                )
            gram = m @ m.T
            if not np.allclose(gram, np.eye(m.shape[0]), atol=1e-8):
                raise DimensionError(f"{name} rows are not orthonormal (worst "
                                     f"deviation {np.abs(gram - np.eye(m.shape[0])).max():.3e})")
            object.__setattr__(self, name, m)
        for name, r in (("in_residual", self.in_residual), ("out_residual", self.out_residual)):
            r = float(r)
            if not (np.isfinite(r) and r >= 0.0):
                raise DimensionError(f"{name} must be a finite non-negative real, got {r}")
            object.__setattr__(self, name, r)


@dataclass
class TransportConfig:
    method: str = "theseus"
    strategy: str = "interp2d"
    # Ridge strength for the pinv_tikhonov method. None resolves per Gram side
    # to 1e-3 times the mean diagonal; an explicit value is used as given.
    lam: Optional[float] = None
    rcond: float = DEFAULT_RCOND
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, valid: {', '.join(METHODS)}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown seq-align strategy {self.strategy!r}, valid: {', '.join(STRATEGIES)}")
        if self.lam is not None and not self.lam > 0:
            raise ConfigError(f"lambda must be positive when given, got {self.lam}")
        if self.rcond < 0:
            raise ConfigError(f"rcond must be non-negative, got {self.rcond}")
        self.seed = int(self.seed)

    def echo(self) -> dict:
        return {
            "method": self.method,
            "seq_align": self.strategy,
            "lambda": self.lam,
            "rcond": self.rcond,
            "seed": self.seed,
        }


def cross_covariance(h_a, h_b) -> np.ndarray:
    """``h_a.T @ h_b`` for row-paired activation matrices."""
    h_a = as_matrix(h_a, "h_a")
    h_b = as_matrix(h_b, "h_b")
    if h_a.shape[0] != h_b.shape[0]:
        raise DimensionError(
            f"cross-covariance needs row-paired inputs, got {h_a.shape[0]} vs {h_b.shape[0]} rows"
        )
    return h_a.T @ h_b


def procrustes_align(h_src, h_dst) -> tuple[np.ndarray, float]:
    """Best row-orthonormal map t minimizing ``|h_src @ t - h_dst|``.

    t is (d_src, d_dst) with d_src <= d_dst, computed as u @ vt from the SVD of
    the cross-covariance. Returns (t, residual at the optimum).
    """
    h_src = as_matrix(h_src, "h_src")
    h_dst = as_matrix(h_dst, "h_dst")
    if h_src.shape[1] > h_dst.shape[1]:
        raise DimensionError(
            f"alignment source is wider than its target ({h_src.shape[1]} > {h_dst.shape[1]}); "
            f"swap the roles and transpose the map"
        )
    res = svd(cross_covariance(h_src, h_dst))
    t = res.u @ res.vt
    residual = float(np.linalg.norm(h_src @ t - h_dst))
    return t, residual


def procrustes_maps(hin_a, hin_b, hout_a, hout_b) -> ProcrustesMap:
    """Alignment maps for both sides of a layer from paired calibration activations."""
    in_map, in_residual = procrustes_align(hin_a, hin_b)
    out_map, out_residual = procrustes_align(hout_a, hout_b)
    return ProcrustesMap(
        in_map=in_map, out_map=out_map, in_residual=in_residual, out_residual=out_residual
    )


def transport_update(update_src, pmap: ProcrustesMap) -> np.ndarray:
    """Conjugate a (d_out_src, d_in_src) update into target coordinates.

    Output shape is (d_out_dst, d_in_dst) and the Frobenius norm matches the
    source update to 1e-10 relative; both are asserted, not assumed.
    """
    update_src = as_matrix(update_src, "update")
    d_out_src, d_out_dst = pmap.out_map.shape
    d_in_src, d_in_dst = pmap.in_map.shape
    if update_src.shape != (d_out_src, d_in_src):
        raise DimensionError(
            f"update shape {update_src.shape} does not match maps "
            f"({d_out_src} out, {d_in_src} in on the source side)"
        )
    out = pmap.out_map.T @ update_src @ pmap.in_map
    if out.shape != (d_out_dst, d_in_dst):
        raise TaskportError(
            f"transported update has shape {out.shape}, expected ({d_out_dst}, {d_in_dst})"
        )
    norm_src = float(np.linalg.norm(update_src))
    norm_dst = float(np.linalg.norm(out))
    if abs(norm_dst - norm_src) > 1e-10 * norm_src + 1e-300:
        raise TaskportError(
            f"transport broke the norm identity: |update| went {norm_src!r} -> {norm_dst!r}",
            kind="norm_identity_violation",
        )
    return out


def transport_bias(bias_delta, pmap: ProcrustesMap) -> np.ndarray:
    """Bias deltas live in the output space only, so they ride the output map alone."""
    b = np.asarray(bias_delta, dtype=np.float64)
    if b.ndim != 1 or b.shape[0] != pmap.out_map.shape[0]:
        raise DimensionError(
            f"bias delta shape {b.shape} does not match the output map source side "
            f"({pmap.out_map.shape[0]},)"
        )
    require_finite(b, "bias delta")
    return pmap.out_map.T @ b


def _trace_product(p, q) -> float:
    return float(np.einsum("ij,ji->", p, q))


def bilinear_residual(hin_a, hout_a, hin_b, hout_b, update_a, update_b, mode: str = "auto") -> float:
    """Frobenius distance between the two updates' activation couplings.

    The coupling of an update is ``h_in @ update.T @ h_out.T`` on paired
    calibration rows. ``mode`` picks the evaluation route: "naive" materializes
    the rows x rows couplings, "factorized" works through feature-space Gram
    matrices and never allocates anything larger than features x features,
    "auto" switches to the factorized route above NAIVE_RESIDUAL_MAX_ROWS rows.
    """
    hin_a = as_matrix(hin_a, "hin_a")
    hout_a = as_matrix(hout_a, "hout_a")
    hin_b = as_matrix(hin_b, "hin_b")
    hout_b = as_matrix(hout_b, "hout_b")
    update_a = as_matrix(update_a, "update_a")
    update_b = as_matrix(update_b, "update_b")
    rows = hin_a.shape[0]
    if not (hout_a.shape[0] == hin_b.shape[0] == hout_b.shape[0] == rows):
        raise DimensionError("all four activation matrices must have the same number of rows")
    if update_a.shape != (hout_a.shape[1], hin_a.shape[1]):
        raise DimensionError(
            f"update_a shape {update_a.shape} does not match activations "
            f"({hout_a.shape[1]}, {hin_a.shape[1]})"
        )
    if update_b.shape != (hout_b.shape[1], hin_b.shape[1]):
        raise DimensionError(
            f"update_b shape {update_b.shape} does not match activations "
            f"({hout_b.shape[1]}, {hin_b.shape[1]})"
        )
    if mode not in ("auto", "naive", "factorized"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "auto":
        mode = "naive" if rows <= NAIVE_RESIDUAL_MAX_ROWS else "factorized"
    shifted_a = hin_a @ update_a.T
    shifted_b = hin_b @ update_b.T
    if mode == "naive":
        return float(np.linalg.norm(shifted_a @ hout_a.T - shifted_b @ hout_b.T))
    aa = _trace_product(shifted_a.T @ shifted_a, hout_a.T @ hout_a)
    bb = _trace_product(shifted_b.T @ shifted_b, hout_b.T @ hout_b)
    ab = _trace_product(shifted_a.T @ shifted_b, hout_b.T @ hout_a)
    return float(np.sqrt(max(aa + bb - 2.0 * ab, 0.0)))


def depth_expand(ckpt: Checkpoint, target_depth: int) -> Checkpoint:
    """Grow a uniform stack to target_depth by linear interpolation in layer space.

    New layer l sits at fractional position l * (depth-1) / (target_depth-1) in
    the source stack; endpoint layers are copied bitwise. Requires every layer
    to share one spec (square, same bias/activation flags); shrinking is not
    supported.
    """
    depth = ckpt.depth
    if depth < 1:
        raise DimensionError("cannot depth-expand an empty checkpoint")
    if target_depth < depth:
        raise DimensionError(f"cannot expand depth {depth} down to {target_depth}")
    spec0 = ckpt.layer_specs[0]
    if spec0.d_in != spec0.d_out:
        raise DimensionError(
            f"depth expansion needs a uniform-width stack, layer 0 is ({spec0.d_in}, {spec0.d_out})"
        )
    for idx, spec in enumerate(ckpt.layer_specs):
        if spec != spec0:
            raise DimensionError(
                f"depth expansion needs identical layer specs throughout; layer {idx} "
                f"({spec.d_in}, {spec.d_out}, bias={spec.has_bias}, {spec.activation}) "
                f"differs from layer 0"
            )
    out = ckpt.copy()
    if target_depth == depth:
        return out
    weights, biases = [], []
    denom = target_depth - 1
    for new_idx in range(target_depth):
        i0, rem = divmod(new_idx * (depth - 1), denom)
        if rem == 0:
            weights.append(ckpt.weights[i0].copy())
            biases.append(None if ckpt.biases[i0] is None else ckpt.biases[i0].copy())
        else:
            frac = rem / denom
            weights.append((1.0 - frac) * ckpt.weights[i0] + frac * ckpt.weights[i0 + 1])
            if ckpt.biases[i0] is None:
                biases.append(None)
            else:
                biases.append((1.0 - frac) * ckpt.biases[i0] + frac * ckpt.biases[i0 + 1])
    meta = dict(ckpt.meta)
    meta["depth_expanded_from"] = str(depth)
    return Checkpoint(
        layer_specs=[spec0] * target_depth, weights=weights, biases=biases, meta=meta
    )


def _oriented_map(h_src, h_dst) -> tuple[np.ndarray, float, bool]:
    """Alignment map in source -> target orientation regardless of which side is wider.

    Returns (map, residual, swapped). When the source side is wider the
    Procrustes problem is solved with the roles swapped and the transposed map
    is returned; it then has orthonormal columns instead of rows.
    """
    if h_src.shape[1] <= h_dst.shape[1]:
        t, residual = procrustes_align(h_src, h_dst)
        return t, residual, False
    t, residual = procrustes_align(h_dst, h_src)
    return t.T, residual, True


def _aligned_flat(rec_a: ActivationRecord, rec_b: ActivationRecord, strategy: str):
    """Length-align one layer's activation records and flatten tokens into rows."""
    la, lb = rec_a.h_in.shape[1], rec_b.h_in.shape[1]
    a_in, a_out, b_in, b_out = rec_a.h_in, rec_a.h_out, rec_b.h_in, rec_b.h_out
    if strategy == "mean":
        a_in = align_sequence(a_in, 1, "mean")
        a_out = align_sequence(a_out, 1, "mean")
        b_in = align_sequence(b_in, 1, "mean")
        b_out = align_sequence(b_out, 1, "mean")
    elif la < lb:
        a_in = align_sequence(a_in, lb, strategy)
        a_out = align_sequence(a_out, lb, strategy)
    elif lb < la:
        b_in = align_sequence(b_in, la, strategy)
        b_out = align_sequence(b_out, la, strategy)
    return tuple(flatten_tokens(h) for h in (a_in, a_out, b_in, b_out))


def _conjugate(update, in_map, out_map, d_out_dst: int, d_in_dst: int) -> np.ndarray:
    out = out_map.T @ update @ in_map
    if out.shape != (d_out_dst, d_in_dst):
        raise TaskportError(
            f"transported update has shape {out.shape}, expected ({d_out_dst}, {d_in_dst})"
        )
    require_finite(out, "transported update")
    return out


def _transport_layer(layer_index, spec_b, rec_a, rec_b, delta, bias_delta, cfg: TransportConfig):
    from . import baselines  # local import; baselines builds on this module

    hin_a, hout_a, hin_b, hout_b = _aligned_flat(rec_a, rec_b, cfg.strategy)
    d_out_b, d_in_b = spec_b.d_out, spec_b.d_in
    in_residual = out_residual = None
    want_bias = spec_b.has_bias and bias_delta is not None

    if cfg.method in ("theseus", "random_source"):
        in_map, in_residual, in_swapped = _oriented_map(hin_a, hin_b)
        out_map, out_residual, out_swapped = _oriented_map(hout_a, hout_b)
        if cfg.method == "random_source":
            src = baselines.random_update(
                delta.shape[0], delta.shape[1], float(np.linalg.norm(delta)), cfg.seed + layer_index
            )
            bias_src = None
            if want_bias:
                bias_src = baselines.random_update(
                    bias_delta.shape[0], 1, float(np.linalg.norm(bias_delta)),
                    cfg.seed + layer_index + 7919,
                ).ravel()
        else:
            src, bias_src = delta, bias_delta
        if not in_swapped and not out_swapped:
            pmap = ProcrustesMap(
                in_map=in_map, out_map=out_map,
                in_residual=in_residual, out_residual=out_residual,
            )
            new_delta = transport_update(src, pmap)
            new_bias = transport_bias(bias_src, pmap) if want_bias else None
        else:
            new_delta = _conjugate(src, in_map, out_map, d_out_b, d_in_b)
            new_bias = out_map.T @ bias_src if want_bias else None
    elif cfg.method == "pinv":
        new_delta = baselines.pinv_transport(hin_a, hout_a, hin_b, hout_b, delta, rcond=cfg.rcond)
        new_bias = (
            baselines.gram_bias_transport(hout_a, hout_b, bias_delta, rcond=cfg.rcond)
            if want_bias else None
        )
    elif cfg.method == "pinv_tikhonov":
        new_delta = baselines.tikhonov_transport(hin_a, hout_a, hin_b, hout_b, delta, lam=cfg.lam)
        new_bias = (
            baselines.gram_bias_transport(hout_a, hout_b, bias_delta, lam=cfg.lam)
            if want_bias else None
        )
    elif cfg.method == "zero_pad":
        new_delta = baselines.zero_pad_update(delta, d_out_b, d_in_b)
        new_bias = None
        if want_bias:
            # zero_pad_update has already rejected shrinking, so the bias fits.
            new_bias = np.zeros(d_out_b)
            new_bias[: bias_delta.shape[0]] = bias_delta
    elif cfg.method == "random":
        new_delta = baselines.random_update(
            d_out_b, d_in_b, float(np.linalg.norm(delta)), cfg.seed + layer_index
        )
        new_bias = None
        if want_bias:
            new_bias = baselines.random_update(
                d_out_b, 1, float(np.linalg.norm(bias_delta)), cfg.seed + layer_index + 7919
            ).ravel()
    else:  # pragma: no cover - TransportConfig already validated the method
        raise ConfigError(f"unknown method {cfg.method!r}")

    if new_delta.shape != (d_out_b, d_in_b):
        raise TaskportError(
            f"transported update has shape {new_delta.shape}, expected ({d_out_b}, {d_in_b})"
        )
    require_finite(new_delta, "transported update")
    if new_bias is not None:
        require_finite(new_bias, "transported bias delta")

    stats = {
        "layer_index": layer_index,
        "in_residual": None if in_residual is None else float(in_residual),
        "out_residual": None if out_residual is None else float(out_residual),
        "tau_norm_src": float(np.linalg.norm(delta)),
        "tau_norm_dst": float(np.linalg.norm(new_delta)),
        "bilinear_residual": bilinear_residual(hin_a, hout_a, hin_b, hout_b, delta, new_delta),
    }
    return new_delta, new_bias, stats


def transport_task_vector(
    theta_a: Checkpoint,
    theta_a_ft: Checkpoint,
    theta_b: Checkpoint,
    calib_inputs_a,
    calib_inputs_b,
    cfg: TransportConfig,
    jobs: int = 1,
) -> tuple[TaskVector, dict]:
    """Move the update (theta_a_ft - theta_a) into theta_b's coordinates.

    Activations are collected from the two base models on paired calibration
    inputs (the same underlying samples rendered in each model's input space),
    length-aligned per cfg.strategy, and used to fit per-layer maps per
    cfg.method. Returns the transported task vector and a per-layer report.
    """
    if theta_a.depth != theta_b.depth:
        raise DepthMismatchError(
            f"source has {theta_a.depth} layers, target has {theta_b.depth}; "
            f"expand the shallower stack first"
        )
    if jobs < 1:
        raise ConfigError(f"jobs must be at least 1, got {jobs}")
    update_a = task_vector(theta_a, theta_a_ft)
    ca = np.asarray(calib_inputs_a, dtype=np.float64)
    cb = np.asarray(calib_inputs_b, dtype=np.float64)
    if ca.ndim != 3 or cb.ndim != 3 or ca.shape[0] != cb.shape[0]:
        raise DimensionError(
            "calibration inputs must be 3-D and pair the same samples "
            f"(got shapes {ca.shape} and {cb.shape})"
        )
    _, rec_a = forward_collect(theta_a, ca)
    _, rec_b = forward_collect(theta_b, cb)

    def run_layer(idx: int):
        try:
            return _transport_layer(
                idx,
                theta_b.layer_specs[idx],
                rec_a[idx],
                rec_b[idx],
                update_a.deltas[idx],
                update_a.bias_deltas[idx],
                cfg,
            )
        except TaskportError as exc:
            raise type(exc)(f"layer {idx}: {exc}", kind=exc.kind) from exc

    indices = range(theta_a.depth)
    if jobs == 1:
        results = [run_layer(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_layer, indices))

    deltas = [r[0] for r in results]
    bias_deltas = [r[1] for r in results]
    report = {**cfg.echo(), "layers": [r[2] for r in results]}
    return TaskVector(deltas=deltas, bias_deltas=bias_deltas), report


def transport_model(
    theta_a: Checkpoint,
    theta_a_ft: Checkpoint,
    theta_b: Checkpoint,
    calib_inputs_a,
    calib_inputs_b,
    cfg: TransportConfig,
    alpha: float = 1.0,
    jobs: int = 1,
) -> tuple[Checkpoint, dict]:
    """Full per-layer pipeline: transport the update and apply it at strength alpha."""
    update_b, report = transport_task_vector(
        theta_a, theta_a_ft, theta_b, calib_inputs_a, calib_inputs_b, cfg, jobs=jobs
    )
    out = apply_update(theta_b, update_b, alpha)
    report = {**report, "alpha": float(alpha)}
    out.meta["transport"] = json.dumps({**cfg.echo(), "alpha": float(alpha)}, sort_keys=True)
    out.meta["transport_residuals"] = json.dumps(report["layers"], sort_keys=True)
    return out, report
