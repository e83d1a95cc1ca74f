"""Independent brute-force oracles shared by the test modules."""

from pathlib import Path

import numpy as np

DATA = Path(__file__).parent / "data"


def curated_molecules():
    rows = []
    for line in (DATA / "curated_molecules.txt").read_text().splitlines():
        if line and not line.startswith("#"):
            name, smi = line.split("\t")
            rows.append((name, smi))
    return rows


def simple_cycles(n, edges):
    """Edge bitmasks of all simple cycles, each found once from its lowest vertex."""
    adj = [[] for _ in range(n)]
    for k, (a, b) in enumerate(edges):
        adj[a].append((b, k))
        adj[b].append((a, k))
    found = set()
    for s in range(n):
        stack = [(s, 1 << s, 0)]
        while stack:
            v, seen, mask = stack.pop()
            for w, k in adj[v]:
                if mask >> k & 1 or w < s:
                    continue
                if w == s:
                    if bin(mask).count("1") >= 2:
                        found.add(mask | 1 << k)
                elif not seen >> w & 1:
                    stack.append((w, seen | 1 << w, mask | 1 << k))
    return found


def gf2_rank(vectors):
    basis = {}  # leading bit -> vector
    for v in vectors:
        while v:
            top = v.bit_length() - 1
            if top not in basis:
                basis[top] = v
                break
            v ^= basis[top]
    return len(basis)


def brute_force_ring_count(mol):
    """Dimension of the cycle space, from explicit cycle enumeration."""
    edges = [(b.begin, b.end) for b in mol.bonds]
    return gf2_rank(simple_cycles(mol.n_atoms, edges))


def transcribed_era_loss(pi1, pi2, e1, e2, ref1, ref2, beta, gamma):
    """Scalar transcription of the published reference loss for one pair, in float64 math."""
    import math

    def logsigmoid(x):
        return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))

    bp = beta / (1.0 + gamma)
    gp = gamma / (1.0 + gamma)
    logp = logsigmoid(pi2 - pi1)
    logp_prime = logsigmoid(pi1 - pi2)
    logp_star = logsigmoid(-bp * (e2 - e1) + gp * (ref2 - ref1))
    logp_star_prime = logsigmoid(-bp * (e1 - e2) + gp * (ref1 - ref2))
    return math.exp(logp_star) * (logp_star - logp) + math.exp(logp_star_prime) * (logp_star_prime - logp_prime)


# hand sums from the shipped table: (logP terms, MR terms)
H1 = (0.123, 1.057)
REFERENCE_SUMS = {
    # CH4 matches C1, four H1
    "C": ([0.1441] + [H1[0]] * 4, [2.503] + [H1[1]] * 4),
    # CH3 (C1), CH2-O (C3), OH (O2), five H1, hydroxyl H (H2)
    "CCO": ([0.1441, -0.2035, -0.2893] + [H1[0]] * 5 + [-0.2677], [2.503, 2.753, 0.8238] + [H1[1]] * 5 + [1.395]),
    # CH3 (C1), C=O carbon (C5), OH (O2), carbonyl O (O9), three H1, acid H (H4)
    "CC(=O)O": ([0.1441, -0.2783, -0.2893, -0.1526] + [H1[0]] * 3 + [0.298], [2.503, 5.007, 0.8238, 0.0] + [H1[1]] * 3 + [1.805]),
    # six aromatic CH (C18), six H1
    "c1ccccc1": ([0.1581] * 6 + [H1[0]] * 6, [3.35] * 6 + [H1[1]] * 6),
    # aromatic n (N11), five C18, five H1
    "c1ccncc1": ([-0.3239] + [0.1581] * 5 + [H1[0]] * 5, [2.202] + [3.35] * 5 + [H1[1]] * 5),
    # CH3-Cl (C3), Cl, three H1
    "CCl": ([-0.2035, 0.6895] + [H1[0]] * 3, [2.753, 5.853] + [H1[1]] * 3),
}


def finite_difference_check(params, loss_fn, grads, h=1e-4):
    """Worst per-tensor relative error between ``grads`` and central differences of ``loss_fn``.

    ``params`` maps names to arrays that ``loss_fn`` reads; they are perturbed in place.
    """
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = loss_fn()
            flat[i] = old - h
            fm = loss_fn()
            flat[i] = old
            num[i] = (fp - fm) / (2 * h)
        scale = max(np.abs(num).max(), np.abs(grads[name]).max(), 1e-8)
        worst = max(worst, np.abs(num - grads[name].reshape(-1)).max() / scale)
    return worst
