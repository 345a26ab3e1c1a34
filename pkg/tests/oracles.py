"""Reference computations that share no code with the package.

Matrix exponentials use Taylor series with scaling and squaring instead of
eigendecomposition; master equations use column-stacked vectorization.
"""
import numpy as np

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


def expm(a, terms=30):
    a = np.asarray(a, dtype=complex)
    norm = np.max(np.sum(np.abs(a), axis=1))
    squarings = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    x = a / 2**squarings
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, terms):
        term = term @ x / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def site_op(op, site, n):
    mats = [I2] * n
    mats[site] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def liouvillian(h, jumps):
    """Column-stacking generator: vec(A X B) = kron(B.T, A) vec(X)."""
    d = h.shape[0]
    eye = np.eye(d)
    gen = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for rate, a in jumps:
        ada = a.conj().T @ a
        gen = gen + rate * (np.kron(a.conj(), a) - 0.5 * np.kron(eye, ada) - 0.5 * np.kron(ada.T, eye))
    return gen


def master_equation(rho0, h, jumps, times):
    """States at ``times`` from exact exponentials of the generator."""
    d = rho0.shape[0]
    gen = liouvillian(h, jumps)
    v0 = rho0.reshape(-1, order="F")
    return np.array([(expm(gen * t) @ v0).reshape(d, d, order="F") for t in times])


def unitary_states(rho0, h, times):
    out = []
    for t in times:
        u = expm(-1j * h * t)
        out.append(u @ rho0 @ u.conj().T)
    return np.array(out)


def reduced_first(states, n):
    """Reduced state of site 0 by explicit index sums."""
    d_rest = 2 ** (n - 1)
    s = states.reshape(states.shape[0], 2, d_rest, 2, d_rest)
    return np.einsum("taebe->tab", s)


def weak_chain(n, couplings):
    h = np.zeros((2**n, 2**n), dtype=complex)
    for (j, k), J in couplings.items():
        h += 0.25 * J * site_op(SZ, j, n) @ site_op(SZ, k, n)
    return h
