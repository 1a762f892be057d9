"""Reference numpy implementations of the solver hot loops."""
import numpy as np

_START = np.array([1.0, 0.75, 0.5, 0.3, 0.2])


def rusanov_divergence(uL, uR, fL, fR, sL, sR, inv_h):
    """Rusanov face fluxes and their difference along the last axis.

    ``uL, uR, fL, fR``: (5, M, nf) states/fluxes left and right of each face.
    ``sL, sR``: (M, nf) wave-speed bounds.  Returns (5, M, nf - 1).
    """
    s = np.maximum(sL, sR)
    F = 0.5 * (fL + fR) - 0.5 * s * (uR - uL)
    return (F[..., 1:] - F[..., :-1]) * inv_h


def spectral_radius(J, iters=20):
    """Spectral-radius estimate of each 5x5 block in ``J`` (N, 5, 5).

    Power iteration on ``J @ J`` so that eigenvalue pairs of equal modulus
    and opposite sign do not stall it.
    """
    J = np.asarray(J, dtype=float)
    M2 = np.matmul(J, J)
    v = np.broadcast_to(_START, J.shape[:1] + (5,)).copy()
    lam = np.zeros(J.shape[0])
    for _ in range(iters):
        w = np.einsum("nij,nj->ni", M2, v)
        lam = np.sqrt(np.einsum("ni,ni->n", w, w))
        ok = lam > 0
        v[ok] = w[ok] / lam[ok, None]
    return np.sqrt(lam)
