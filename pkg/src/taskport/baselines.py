"""Reference baselines the transport method is compared against.

All of these produce an update shaped for the target model. zero_pad and
random ignore activations entirely; the pseudo-inverse pair solves the
coupling-matching problem directly on the target activations; random_source
runs a norm-matched random matrix through the alignment maps to isolate the
effect of alignment from the update's content.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .linalg import DEFAULT_RCOND, as_matrix, pseudo_inverse, require_finite, tikhonov_solve
from .transport import ProcrustesMap, cross_covariance, transport_update

__all__ = [
    "zero_pad_update",
    "random_update",
    "pinv_transport",
    "tikhonov_transport",
    "random_source_transport",
    "gram_bias_transport",
]


def zero_pad_update(update_src, d_out: int, d_in: int) -> np.ndarray:
    """Copy the source update into the top-left block of a (d_out, d_in) zero matrix.

    Padding only: a target smaller than the source on either axis is an error,
    which keeps the Frobenius norm of the output equal to the source's.
    """
    update_src = as_matrix(update_src, "update")
    if d_out < update_src.shape[0] or d_in < update_src.shape[1]:
        raise DimensionError(
            f"cannot zero-pad a {update_src.shape} update into ({d_out}, {d_in})"
        )
    out = np.zeros((d_out, d_in))
    out[: update_src.shape[0], : update_src.shape[1]] = update_src
    return out


def random_update(d_out: int, d_in: int, target_norm: float, seed) -> np.ndarray:
    """Seeded Gaussian matrix rescaled to an exact Frobenius norm."""
    if d_out < 1 or d_in < 1:
        raise DimensionError(f"dims must be positive, got ({d_out}, {d_in})")
    target_norm = float(target_norm)
    if not (np.isfinite(target_norm) and target_norm >= 0.0):
        raise DimensionError(f"target_norm must be a finite non-negative real, got {target_norm}")
    if target_norm == 0.0:
        return np.zeros((d_out, d_in))
    gauss = np.random.default_rng(seed).standard_normal((d_out, d_in))
    norm = np.linalg.norm(gauss)
    if norm == 0.0:  # pragma: no cover - a Gaussian draw is never exactly zero
        raise DimensionError("degenerate zero draw")
    return gauss * (target_norm / norm)


def pinv_transport(hin_a, hout_a, hin_b, hout_b, update_a, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Least-squares coupling match via pseudo-inverses of the target Gram matrices.

    Solves for the target update whose coupling on the calibration rows best
    matches the source coupling:

        new.T = (hin_b.T hin_b)^+ (hin_b.T hin_a) update.T (hout_a.T hout_b) (hout_b.T hout_b)^+

    The middle product contracts the source coupling against the target
    activations, so nothing larger than features x features is formed.
    """
    hin_a = as_matrix(hin_a, "hin_a")
    hout_a = as_matrix(hout_a, "hout_a")
    hin_b = as_matrix(hin_b, "hin_b")
    hout_b = as_matrix(hout_b, "hout_b")
    update_a = as_matrix(update_a, "update_a")
    if update_a.shape != (hout_a.shape[1], hin_a.shape[1]):
        raise DimensionError(
            f"update shape {update_a.shape} does not match source activations "
            f"({hout_a.shape[1]}, {hin_a.shape[1]})"
        )
    gram_in = cross_covariance(hin_b, hin_b)
    gram_out = cross_covariance(hout_b, hout_b)
    mid = cross_covariance(hin_b, hin_a) @ update_a.T @ cross_covariance(hout_a, hout_b)
    new_t = pseudo_inverse(gram_in, rcond) @ mid @ pseudo_inverse(gram_out, rcond)
    return np.ascontiguousarray(new_t.T)


def _resolve_lam(gram, lam) -> float:
    if lam is not None:
        return float(lam)
    # Default ridge: 1e-3 relative to the mean Gram diagonal, floored so a
    # degenerate all-zero Gram still yields a positive-definite solve.
    return 1e-3 * max(float(np.mean(np.diag(gram))), 1e-9)


def tikhonov_transport(hin_a, hout_a, hin_b, hout_b, update_a, lam: float | None = None) -> np.ndarray:
    """pinv_transport with ridge-regularized Gram solves instead of pseudo-inverses.

    lam=None resolves per Gram side to 1e-3 times its mean diagonal; an explicit
    lam is used as given on both sides and must be positive.
    """
    hin_a = as_matrix(hin_a, "hin_a")
    hout_a = as_matrix(hout_a, "hout_a")
    hin_b = as_matrix(hin_b, "hin_b")
    hout_b = as_matrix(hout_b, "hout_b")
    update_a = as_matrix(update_a, "update_a")
    if update_a.shape != (hout_a.shape[1], hin_a.shape[1]):
        raise DimensionError(
            f"update shape {update_a.shape} does not match source activations "
            f"({hout_a.shape[1]}, {hin_a.shape[1]})"
        )
    if lam is not None and not float(lam) > 0:
        raise DimensionError(f"lam must be positive, got {lam}")
    gram_in = cross_covariance(hin_b, hin_b)
    gram_out = cross_covariance(hout_b, hout_b)
    mid = cross_covariance(hin_b, hin_a) @ update_a.T @ cross_covariance(hout_a, hout_b)
    left = tikhonov_solve(gram_in, mid, _resolve_lam(gram_in, lam))
    new_t = tikhonov_solve(gram_out, left.T, _resolve_lam(gram_out, lam)).T
    return np.ascontiguousarray(new_t.T)


def gram_bias_transport(hout_a, hout_b, bias_delta, rcond: float | None = None,
                        lam: float | None = None) -> np.ndarray:
    """Output-side least-squares analogue for bias deltas.

    Matches the constant output shift induced by the bias delta:
    ``new = (hout_b.T hout_b)^+ (hout_b.T hout_a) delta`` (ridge-solved when a
    lam route is requested instead of rcond).
    """
    hout_a = as_matrix(hout_a, "hout_a")
    hout_b = as_matrix(hout_b, "hout_b")
    b = np.asarray(bias_delta, dtype=np.float64)
    if b.ndim != 1 or b.shape[0] != hout_a.shape[1]:
        raise DimensionError(
            f"bias delta shape {b.shape} does not match source activations ({hout_a.shape[1]},)"
        )
    require_finite(b, "bias delta")
    gram = cross_covariance(hout_b, hout_b)
    rhs = cross_covariance(hout_b, hout_a) @ b
    if rcond is not None:
        return pseudo_inverse(gram, rcond) @ rhs
    return tikhonov_solve(gram, rhs, _resolve_lam(gram, lam))


def random_source_transport(pmap: ProcrustesMap, target_norm: float, seed) -> np.ndarray:
    """Transport a seeded norm-matched random matrix through existing alignment maps."""
    d_out_src = pmap.out_map.shape[0]
    d_in_src = pmap.in_map.shape[0]
    return transport_update(random_update(d_out_src, d_in_src, target_norm, seed), pmap)
