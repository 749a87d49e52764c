"""Independent reference computations shared by the test modules.

Everything here is deliberately dumb and loop-based, in float64, so it
cannot share bugs with the vectorized implementations under test.
"""

import numpy as np


def fd_gradient(f, arrays, index, step=1e-3):
    """Central finite-difference gradient of f w.r.t. arrays[index].

    f maps a list of float64 arrays to a python float. Returns an array of
    the same shape as arrays[index].
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    target = arrays[index]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    while not it.finished:
        ij = it.multi_index
        orig = target[ij]
        target[ij] = orig + step
        up = f(arrays)
        target[ij] = orig - step
        down = f(arrays)
        target[ij] = orig
        grad[ij] = (up - down) / (2.0 * step)
        it.iternext()
    return grad


def rel_error(analytic, reference):
    """Max absolute difference, normalized by the reference's largest entry."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = max(np.abs(reference).max(), 1e-8)
    return np.abs(analytic - reference).max() / denom


def dense_softmax(rows):
    rows = np.asarray(rows, dtype=np.float64)
    out = np.zeros_like(rows)
    for i in range(rows.shape[0]):
        shifted = rows[i] - rows[i].max()
        e = np.exp(shifted)
        out[i] = e / e.sum()
    return out


def dense_attention(queries, keys_values, wq, wk, wv, wo, num_heads):
    """Loop-based multi-head scaled dot-product attention, float64.

    queries: k x d. keys_values: t x d used as both keys and values.
    wq/wk/wv: per-head lists of (head_dim x d) arrays; wo: d x d.
    Returns k x d.
    """
    queries = np.asarray(queries, dtype=np.float64)
    kv = np.asarray(keys_values, dtype=np.float64)
    head_outs = []
    for h in range(num_heads):
        q = queries @ np.asarray(wq[h], dtype=np.float64).T
        k = kv @ np.asarray(wk[h], dtype=np.float64).T
        v = kv @ np.asarray(wv[h], dtype=np.float64).T
        scores = q @ k.T / np.sqrt(q.shape[1])
        attn = dense_softmax(scores)
        head_outs.append(attn @ v)
    merged = np.concatenate(head_outs, axis=1)
    return merged @ np.asarray(wo, dtype=np.float64).T


def dense_rgcn_layer(num_nodes, states, edges_by_view, weights_by_view, self_weight):
    """Eq.-by-eq relational conv: per node, per view, mean of W_v @ z_j plus self loop, ReLU."""
    states = np.asarray(states, dtype=np.float64)
    w0 = np.asarray(self_weight, dtype=np.float64)
    out = np.zeros_like(states)
    for i in range(num_nodes):
        acc = w0 @ states[i]
        for view, edges in edges_by_view.items():
            wv = np.asarray(weights_by_view[view], dtype=np.float64)
            incoming = [s for (s, d) in edges if d == i]
            if incoming:
                msg = np.zeros(states.shape[1])
                for s in incoming:
                    msg += wv @ states[s]
                acc += msg / len(incoming)
        out[i] = np.maximum(acc, 0.0)
    return out


def pairwise_auc(scores, labels):
    """AUC by exhaustive positive/negative comparison, ties get half credit."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def stepwise_ap(scores, labels):
    """Average precision over the score-descending ranking, stable ties."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    n_pos = sum(labels)
    tp = 0
    ap = 0.0
    prev_recall = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            tp += 1
            recall = tp / n_pos
            precision = tp / rank
            ap += (recall - prev_recall) * precision
            prev_recall = recall
    return ap


def brute_force_metapaths(apply_edges, num_members, num_jobs):
    """All co-apply member pairs and co-applied job pairs from apply edges."""
    jobs_of = [set() for _ in range(num_members)]
    members_of = [set() for _ in range(num_jobs)]
    for m, j in apply_edges:
        jobs_of[m].add(j)
        members_of[j].add(m)
    co_apply = set()
    for members in members_of:
        ms = sorted(members)
        for a in range(len(ms)):
            for b in range(a + 1, len(ms)):
                co_apply.add((ms[a], ms[b]))
    co_applied = set()
    for jobs in jobs_of:
        js = sorted(jobs)
        for a in range(len(js)):
            for b in range(a + 1, len(js)):
                co_applied.add((js[a], js[b]))
    return co_apply, co_applied
