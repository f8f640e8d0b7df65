"""
Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` loop version and a vectorised
numpy version. The public names dispatch on ``_accel.USE_NUMBA``; both
variants stay importable (``*_nb`` / ``*_np``) so tests and the benchmark can
compare them directly.
"""
import numpy as np

from ._accel import USE_NUMBA, njit, BACKEND

__all__ = [
    "BACKEND",
    "box_worst_case",
    "sample_covariance",
    "bootstrap_covariances",
    "batch_time_update",
    "batch_measurement_update",
]


# --------------------------------------------------------------------------
# worst case of trace(C P) over the entrywise box L <= P <= U


def box_worst_case_np(C, L, U):
    pos = C > 0
    neg = C < 0
    return float(np.sum(C[pos] * U[pos]) + np.sum(C[neg] * L[neg]))


@njit(cache=True)
def box_worst_case_nb(C, L, U):
    n, m = C.shape
    acc = 0.0
    for i in range(n):
        for j in range(m):
            c = C[i, j]
            if c > 0.0:
                acc += c * U[i, j]
            elif c < 0.0:
                acc += c * L[i, j]
    return acc


# --------------------------------------------------------------------------
# unbiased sample covariance, fixed summation order


def sample_covariance_np(E):
    mean = E.mean(axis=0)
    D = E - mean
    return (D.T @ D) / (E.shape[0] - 1)


@njit(cache=True)
def sample_covariance_nb(E):
    N, n = E.shape
    mean = np.zeros(n)
    for k in range(N):
        for i in range(n):
            mean[i] += E[k, i]
    for i in range(n):
        mean[i] /= N
    S = np.zeros((n, n))
    for k in range(N):
        for i in range(n):
            di = E[k, i] - mean[i]
            for j in range(i, n):
                S[i, j] += di * (E[k, j] - mean[j])
    for i in range(n):
        for j in range(i, n):
            S[i, j] /= N - 1
            S[j, i] = S[i, j]
    return S


# --------------------------------------------------------------------------
# bootstrap resample covariances; idx has shape (B, N)


def bootstrap_covariances_np(E, idx):
    X = E[idx]                                   # (B, N, n)
    N = idx.shape[1]
    mean = X.mean(axis=1)                        # (B, n)
    S = np.einsum("bki,bkj->bij", X, X)
    return (S - N * mean[:, :, None] * mean[:, None, :]) / (N - 1)


@njit(cache=True)
def bootstrap_covariances_nb(E, idx):
    B, N = idx.shape
    n = E.shape[1]
    out = np.empty((B, n, n))
    s1 = np.empty(n)
    s2 = np.empty((n, n))
    for b in range(B):
        s1[:] = 0.0
        s2[:, :] = 0.0
        for k in range(N):
            r = idx[b, k]
            for i in range(n):
                ei = E[r, i]
                s1[i] += ei
                for j in range(i, n):
                    s2[i, j] += ei * E[r, j]
        for i in range(n):
            for j in range(i, n):
                v = (s2[i, j] - s1[i] * s1[j] / N) / (N - 1)
                out[b, i, j] = v
                out[b, j, i] = v
    return out


# --------------------------------------------------------------------------
# batched EKF covariance recursions (one small matrix per trajectory)


def batch_time_update_np(P, A, W):
    """P⁻ = A P Aᵀ + W for stacks P (N,n,n), A (N,n,n); W is (n,n)."""
    out = np.einsum("kij,kjl,kml->kim", A, P, A) + W
    return 0.5 * (out + np.swapaxes(out, 1, 2))


@njit(cache=True)
def batch_time_update_nb(P, A, W):
    N, n, _ = P.shape
    out = np.empty_like(P)
    tmp = np.empty((n, n))
    for k in range(N):
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc += A[k, i, l] * P[k, l, j]
                tmp[i, j] = acc
        for i in range(n):
            for j in range(i, n):
                acc = W[i, j]
                for l in range(n):
                    acc += tmp[i, l] * A[k, j, l]
                out[k, i, j] = acc
                out[k, j, i] = acc
    return out


def batch_measurement_update_np(P, H, V):
    """Kalman gain and (1 - K H) P for stacks; V = B_v R B_vᵀ is (m,m)."""
    PHt = P @ np.swapaxes(H, 1, 2)              # (N,n,m)
    S = H @ PHt + V                               # (N,m,m)
    K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PHt, 1, 2)), 1, 2)
    n = P.shape[1]
    Pp = (np.eye(n) - K @ H) @ P
    Pp = 0.5 * (Pp + np.swapaxes(Pp, 1, 2))
    return K, Pp


@njit(cache=True)
def batch_measurement_update_nb(P, H, V):
    N, n, _ = P.shape
    m = H.shape[1]
    K = np.empty((N, n, m))
    Pp = np.empty_like(P)
    PHt = np.empty((n, m))
    S = np.empty((m, m))
    IKH = np.empty((n, n))
    for k in range(N):
        for i in range(n):
            for a in range(m):
                acc = 0.0
                for l in range(n):
                    acc += P[k, i, l] * H[k, a, l]
                PHt[i, a] = acc
        for a in range(m):
            for b in range(m):
                acc = V[a, b]
                for l in range(n):
                    acc += H[k, a, l] * PHt[l, b]
                S[a, b] = acc
        # K = PHt S^-1  <=>  S Kᵀ = PHtᵀ  (S symmetric)
        if m == 1:
            for i in range(n):
                K[k, i, 0] = PHt[i, 0] / S[0, 0]
        else:
            Kt = np.linalg.solve(S, np.ascontiguousarray(PHt.T))
            for i in range(n):
                for a in range(m):
                    K[k, i, a] = Kt[a, i]
        for i in range(n):
            for j in range(n):
                acc = 1.0 if i == j else 0.0
                for a in range(m):
                    acc -= K[k, i, a] * H[k, a, j]
                IKH[i, j] = acc
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc += IKH[i, l] * P[k, l, j]
                Pp[k, i, j] = acc
        for i in range(n):
            for j in range(i + 1, n):
                v = 0.5 * (Pp[k, i, j] + Pp[k, j, i])
                Pp[k, i, j] = v
                Pp[k, j, i] = v
    return K, Pp


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _shifted(E):
    # covariance is shift invariant; subtracting one sample first avoids
    # cancellation for large means and makes identical samples give exactly 0
    E = _f64(E)
    return E - E[:1] if len(E) else E


if USE_NUMBA:
    def box_worst_case(C, L, U):
        return float(box_worst_case_nb(_f64(C), _f64(L), _f64(U)))

    def sample_covariance(E):
        return sample_covariance_nb(_shifted(E))

    def bootstrap_covariances(E, idx):
        return bootstrap_covariances_nb(_shifted(E), np.ascontiguousarray(idx, dtype=np.int64))

    def batch_time_update(P, A, W):
        return batch_time_update_nb(_f64(P), _f64(A), _f64(W))

    def batch_measurement_update(P, H, V):
        return batch_measurement_update_nb(_f64(P), _f64(H), _f64(V))
else:
    box_worst_case = box_worst_case_np
    batch_time_update = batch_time_update_np
    batch_measurement_update = batch_measurement_update_np

    def sample_covariance(E):
        return sample_covariance_np(_shifted(E))

    def bootstrap_covariances(E, idx):
        return bootstrap_covariances_np(_shifted(E), idx)
