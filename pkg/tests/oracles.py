"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written from first principles (different
algorithms, plain loops) so a shared bug between test and implementation
is unlikely.  Keep these slow and obvious.
"""
import heapq
import math

import numpy as np

CELL = 0.25


def dijkstra_grid(walkable: np.ndarray, sources) -> np.ndarray:
    """Uniform-cost Dijkstra over the 4-neighbourhood, edge weight CELL.

    walkable: (H, W) bool.  sources: iterable of (i, j).  Returns metres,
    -1.0 for unreachable or blocked cells.
    """
    h, w = walkable.shape
    dist = np.full((h, w), np.inf)
    heap = []
    for (i, j) in sources:
        if walkable[i, j]:
            dist[i, j] = 0.0
            heapq.heappush(heap, (0.0, i, j))
    while heap:
        d, i, j = heapq.heappop(heap)
        if d > dist[i, j]:
            continue
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w and walkable[ni, nj]:
                nd = d + CELL
                if nd < dist[ni, nj]:
                    dist[ni, nj] = nd
                    heapq.heappush(heap, (nd, ni, nj))
    out = np.where(np.isfinite(dist), dist, -1.0)
    out[~walkable] = -1.0
    return out


def spl_brute(per_episode) -> float:
    """per_episode: list of (success, shortest, agent_path)."""
    vals = []
    for success, shortest, agent in per_episode:
        if not success:
            vals.append(0.0)
            continue
        denom = max(agent, shortest)
        vals.append(1.0 if denom == 0.0 else shortest / denom)
    return sum(vals) / len(vals)


def softspl_brute(per_episode) -> float:
    """per_episode: list of (initial_geodesic, final_geodesic, shortest, agent_path)."""
    vals = []
    for d0, dT, shortest, agent in per_episode:
        if not math.isfinite(dT):
            vals.append(0.0)
            continue
        progress = max(0.0, min(1.0, 1.0 - dT / d0))
        denom = max(agent, shortest)
        ratio = 1.0 if denom == 0.0 else shortest / denom
        vals.append(progress * ratio)
    return sum(vals) / len(vals)


def gae_direct(rewards, values, dones, bootstrap, gamma, lam):
    """Advantage_t = sum_k (gamma*lam)^k * delta_{t+k}, truncated at dones.

    All arrays shaped (T, N); bootstrap (N,).  dones[t] marks that the step
    at t ENDED its episode, so no credit flows from t+1 back to t.
    """
    t_len, n = rewards.shape
    adv = np.zeros((t_len, n))
    for w in range(n):
        for t in range(t_len):
            acc = 0.0
            coef = 1.0
            for k in range(t, t_len):
                v_next = bootstrap[w] if k == t_len - 1 else values[k + 1, w]
                if dones[k, w]:
                    v_next = 0.0
                delta = rewards[k, w] + gamma * v_next - values[k, w]
                acc += coef * delta
                if dones[k, w]:
                    break
                coef *= gamma * lam
            adv[t, w] = acc
    return adv, adv + values


def gru_cell_manual(x, h, w_ih, w_hh, b_ih, b_hh):
    """One GRU step, torch gate order (reset, update, new), plain loops."""
    hid = h.shape[-1]

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    gi = w_ih @ x + b_ih
    gh = w_hh @ h + b_hh
    r = sigmoid(gi[:hid] + gh[:hid])
    z = sigmoid(gi[hid:2 * hid] + gh[hid:2 * hid])
    n = np.tanh(gi[2 * hid:] + r * gh[2 * hid:])
    return (1.0 - z) * n + z * h


def attention_pool_manual(feature_map, pos, wq, wk, wv, bq, bk, bv, wo, bo, heads):
    """Scalar-loop transcription of single-query multi-head attention."""
    c, h, w = feature_map.shape
    toks = [feature_map[:, i, j].astype(np.float64)
            for i in range(h) for j in range(w)]
    mean_tok = sum(toks) / len(toks)
    seq = [mean_tok] + toks
    seq = [np.asarray(t) + pos[i] for i, t in enumerate(seq)]
    q = seq[0] @ wq + bq
    ks = [t @ wk + bk for t in seq]
    vs = [t @ wv + bv for t in seq]
    d = q.shape[0]
    dh = d // heads
    out = np.zeros(d)
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        scores = [float(k[sl] @ q[sl]) / math.sqrt(dh) for k in ks]
        m = max(scores)
        e = [math.exp(s - m) for s in scores]
        tot = sum(e)
        for i, v in enumerate(vs):
            out[sl] += (e[i] / tot) * v[sl]
    return (out @ wo + bo).astype(np.float32)


def walkable_brute(grid: np.ndarray, object_cells) -> np.ndarray:
    """Free-typed cells not occupied by an object (0 = free cell type)."""
    mask = grid == 0
    for (i, j) in object_cells:
        mask[i, j] = False
    return mask


def ray_clear_brute(grid: np.ndarray, a, b) -> bool:
    """Dense-sampled segment test against wall cells (1 = wall cell type).

    Same declared geometry as the simulator (points every <=0.05 cell units,
    floor assignment, out-of-bounds counts as wall) but written as a plain
    loop rather than vectorized numpy.
    """
    ax, ay = a[0] / CELL, a[1] / CELL
    bx, by = b[0] / CELL, b[1] / CELL
    dist = math.hypot(bx - ax, by - ay)
    n = int(dist / 0.05) + 2
    for step in range(n + 1):
        s = step / n
        x = ax + s * (bx - ax)
        y = ay + s * (by - ay)
        i, j = math.floor(y), math.floor(x)
        if not (0 <= i < grid.shape[0] and 0 <= j < grid.shape[1]):
            return False
        if grid[i, j] == 1:
            return False
    return True


def qualifying_brute(scene, category: int, interact_range: float = 1.0):
    """Walkable cells within interact range of some instance of `category`
    with a clear sight line, re-derived with plain loops."""
    mask = walkable_brute(scene.grid, {o.cell() for o in scene.objects})
    cells = set()
    for o in scene.objects:
        if o.category != category:
            continue
        for i in range(scene.grid.shape[0]):
            for j in range(scene.grid.shape[1]):
                if not mask[i, j]:
                    continue
                cx, cy = (j + 0.5) * CELL, (i + 0.5) * CELL
                d = math.hypot(cx - o.position[0], cy - o.position[1])
                if d <= interact_range and ray_clear_brute(scene.grid, (cx, cy), o.position):
                    cells.add((i, j))
    return cells


def diff_brute(current, goal, held=()):
    """(ids, energy): misplaced object ids and total misplacement energy.

    moved = displacement > 0.25 m (held counts as moved, displacement inf);
    openable-state mismatch adds the id and 1.0 energy; moved adds
    min(displacement, 2.0).
    """
    ids = set()
    energy = 0.0
    cur_by_id = {o.id: o for o in current.objects}
    for g in goal.objects:
        if g.id in held:
            ids.add(g.id)
            energy += 2.0
            continue
        c = cur_by_id[g.id]
        disp = math.hypot(c.position[0] - g.position[0],
                          c.position[1] - g.position[1])
        if disp > 0.25:
            ids.add(g.id)
            energy += min(disp, 2.0)
        if current.openables.get(g.id) != goal.openables.get(g.id):
            ids.add(g.id)
            energy += 1.0
    return ids, energy


def micro_f1_from_table(pairs) -> float:
    """pairs: list of (prediction, truth) booleans."""
    tp = sum(1 for p, t in pairs if p and t)
    fp = sum(1 for p, t in pairs if p and not t)
    fn = sum(1 for p, t in pairs if not p and t)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def rearrangement_brute(episodes):
    """episodes: list of dicts with keys start_ids (set), end_ids (set),
    start_energy, end_energy.

    Returns (fixed_strict, success_rate, energy_ratio, misplaced_ratio).
    FS per episode = fraction of start-misplaced ids absent from the end
    diff, zeroed when any id appears at the end that was fine at the start;
    episodes with an empty start diff drop out of the FS/E/M denominators.
    """
    fs_vals, e_vals, m_vals, sr_vals = [], [], [], []
    for ep in episodes:
        start, end = set(ep["start_ids"]), set(ep["end_ids"])
        sr_vals.append(1.0 if not end else 0.0)
        if not start:
            continue
        disturbed = end - start
        fs_vals.append(0.0 if disturbed else len(start - end) / len(start))
        e_vals.append(ep["end_energy"] / ep["start_energy"])
        m_vals.append(len(end) / len(start))
    fs = sum(fs_vals) / len(fs_vals) if fs_vals else 0.0
    e = sum(e_vals) / len(e_vals) if e_vals else 0.0
    m = sum(m_vals) / len(m_vals) if m_vals else 0.0
    return fs, sum(sr_vals) / len(sr_vals), e, m
