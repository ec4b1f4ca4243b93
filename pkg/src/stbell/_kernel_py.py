"""Numpy fallback for the batched round kernel.

Same contract as the compiled ``_kernel.simulate_batch``; selected by
``stbell.kernel`` when the extension is not built.
"""
import numpy as np

ZERO_BRANCH = 1e-14
_CHUNK = 16384


def _snap(p):
    p = np.where(p > 1.0 - ZERO_BRANCH, 1.0, p)
    return np.where(p < ZERO_BRANCH, 0.0, p)


def _trace_prod(x, y):
    return np.einsum("nij,nji->n", x, y).real


def _run_chunk(states, state_idx, alice_obs, bob_unitary, bob_obs, u_alice, u_bob, alice_proj, bob_proj, unitaries):
    rho = states[state_idx]
    p = _snap(_trace_prod(alice_proj[alice_obs, 0], rho))
    a = np.where(u_alice < p, 1, -1).astype(np.int8)
    pa = np.where(a == 1, p, 1.0 - p)
    if np.any(pa < ZERO_BRANCH):
        return None, None, "alice"
    proj = alice_proj[alice_obs, (a == -1).astype(np.intp)]
    m = proj @ rho @ proj / pa[:, None, None]
    u = unitaries[bob_unitary]
    m = u @ m @ u.conj().transpose(0, 2, 1)
    qb = _snap(_trace_prod(bob_proj[bob_obs], m))
    b = np.where(u_bob < qb, 1, -1).astype(np.int8)
    pb = np.where(b == 1, qb, 1.0 - qb)
    if np.any(pb < ZERO_BRANCH):
        return None, None, "bob"
    return a, b, None


def simulate_batch(states, state_idx, alice_obs, bob_unitary, bob_obs, u_alice, u_bob, alice_proj, bob_proj, unitaries):
    """Measure Alice, collapse, rotate Bob, measure Bob for every round.

    Returns ``(a, b, status)`` where ``status`` is 0 on success and the
    (1-based) index of the first zero-probability collapse otherwise.
    """
    n = len(state_idx)
    a_out = np.empty(n, dtype=np.int8)
    b_out = np.empty(n, dtype=np.int8)
    alice_obs = np.asarray(alice_obs, dtype=np.intp)
    bob_unitary = np.asarray(bob_unitary, dtype=np.intp)
    bob_obs = np.asarray(bob_obs, dtype=np.intp)
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        sl = slice(lo, hi)
        a, b, err = _run_chunk(
            states, state_idx[sl], alice_obs[sl], bob_unitary[sl], bob_obs[sl],
            u_alice[sl], u_bob[sl], alice_proj, bob_proj, unitaries,
        )
        if err is not None:
            # locate the offending round for the error message
            for j in range(lo, hi):
                a1, _, err1 = _run_chunk(
                    states, state_idx[j:j + 1], alice_obs[j:j + 1], bob_unitary[j:j + 1], bob_obs[j:j + 1],
                    u_alice[j:j + 1], u_bob[j:j + 1], alice_proj, bob_proj, unitaries,
                )
                if err1 is not None:
                    return a_out, b_out, j + 1
        a_out[sl] = a
        b_out[sl] = b
    return a_out, b_out, 0
