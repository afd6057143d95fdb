"""Matrix exponential by scaling and squaring with a degree-13 Pade approximant.

This is the independent oracle the spectral-sum semigroup is checked
against, so it deliberately shares no code with the projector path.
Coefficients and the theta_13 threshold follow Higham (2005).
"""
import numpy as np

_B13 = np.array([
    64764752532480000., 32382376266240000., 7771770303897600.,
    1187353796428800., 129060195264000., 10559470521600.,
    670442572800., 33522128640., 1323241920., 40840800., 960960.,
    16380., 182., 1.,
])
_THETA13 = 5.371920351148152


def _pade13(A):
    b = _B13
    ident = np.broadcast_to(np.eye(A.shape[-1], dtype=A.dtype), A.shape)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    return np.linalg.solve(V - U, V + U)


def matrix_exponential_oracle(M):
    """Return exp(M) for a square matrix or a stack of square matrices.

    Each matrix in the stack gets its own scaling exponent, so the result
    is the same as calling the function one matrix at a time.
    """
    M = np.asarray(M)
    dtype = np.result_type(M.dtype, np.float64)
    A = M.astype(dtype, copy=True)
    single = A.ndim == 2
    if single:
        A = A[None]
    norm1 = np.abs(A).sum(axis=-2).max(axis=-1)
    with np.errstate(divide="ignore"):
        s = np.where(norm1 > _THETA13, np.ceil(np.log2(norm1 / _THETA13)), 0.0)
    s = np.maximum(s, 0).astype(int)
    A = A / (2.0 ** s)[:, None, None]
    E = _pade13(A)
    for j in range(int(s.max(initial=0))):
        sel = s > j
        E[sel] = E[sel] @ E[sel]
    return E[0] if single else E
