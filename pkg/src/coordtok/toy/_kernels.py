"""Hot loops of the toy policy: grammar tracking, sparse features, decoding and
gradient accumulation.  ``*_nb`` are numba-compiled, ``*_np`` use numpy."""
import numpy as np

from .._accel import njit, pick
from .world import (BOX_END, BOX_START, CAT_BASE, COMMA, COORD_BASE, EOS, NONE, REF_END,
                    REF_START)

# grammar states, derived from the last token and a few counters
S_START, S_REF, S_CAT, S_REF_END, S_BOX_START, S_IN_BOX, S_BOX_DONE, S_NONE, S_CLOSED, \
    S_RECORD_SEP = range(10)
N_STATES = 10
N_PHRASE = 6     # phrases closed so far, capped
N_COUNT = 6      # observed count of the active category, capped
N_EMITTED = 3    # boxes emitted for the active phrase: 0, 1, 2+
N_KNOTS = 101    # tent basis over coordinate bins, 10 bins apart
KNOT_STEP = 10.0

F_BIAS = 0
F_STATE = F_BIAS + 1
F_PHRASE = F_STATE + N_STATES
F_COUNT = F_PHRASE + N_PHRASE
F_EMITTED = F_COUNT + N_COUNT
F_TARGET = F_EMITTED + N_EMITTED
N_FEATURES = F_TARGET + N_KNOTS
MAX_ACTIVE = 7

# tracker slots
T_STATE, T_PHRASES, T_CAT, T_SLOT, T_EMITTED, T_IN_PAYLOAD = range(6)


def _push_py(st, t):
    if t == REF_START:
        st[T_STATE] = S_REF
        st[T_CAT] = -1
        st[T_EMITTED] = 0
        st[T_SLOT] = 0
        st[T_IN_PAYLOAD] = 0
    elif t >= COORD_BASE:
        st[T_SLOT] += 1
        if st[T_SLOT] == 4:
            st[T_SLOT] = 0
            st[T_EMITTED] += 1
            st[T_STATE] = S_BOX_DONE
        else:
            st[T_STATE] = S_IN_BOX
    elif t >= CAT_BASE:
        st[T_STATE] = S_CAT
        st[T_CAT] = t - CAT_BASE
    elif t == REF_END:
        st[T_STATE] = S_REF_END
    elif t == BOX_START:
        st[T_STATE] = S_BOX_START
        st[T_IN_PAYLOAD] = 1
        st[T_SLOT] = 0
        st[T_EMITTED] = 0
    elif t == COMMA:
        if st[T_IN_PAYLOAD] == 1:
            st[T_STATE] = S_IN_BOX
            st[T_SLOT] = 0
        else:
            st[T_STATE] = S_RECORD_SEP
    elif t == NONE:
        st[T_STATE] = S_NONE
    elif t == BOX_END:
        st[T_STATE] = S_CLOSED
        st[T_IN_PAYLOAD] = 0
        st[T_PHRASES] += 1


def _featurize_py(st, obs_count, obs_box, idx, val):
    """Write the active features of tracker ``st`` into ``idx``/``val``; return their count."""
    idx[0] = F_BIAS
    val[0] = 1.0
    idx[1] = F_STATE + st[T_STATE]
    val[1] = 1.0
    idx[2] = F_PHRASE + min(st[T_PHRASES], N_PHRASE - 1)
    val[2] = 1.0
    k = 3
    c = st[T_CAT]
    if c >= 0:
        co = obs_count[c]
        idx[k] = F_COUNT + min(co, N_COUNT - 1)
        val[k] = 1.0
        idx[k + 1] = F_EMITTED + min(st[T_EMITTED], N_EMITTED - 1)
        val[k + 1] = 1.0
        k += 2
        s = st[T_STATE]
        # the coordinate target is visible only while more boxes are expected
        if (s == S_BOX_START or s == S_IN_BOX) and st[T_EMITTED] < co:
            u = obs_box[c, st[T_SLOT]] / KNOT_STEP
            j = int(np.floor(u))
            if j > N_KNOTS - 2:
                j = N_KNOTS - 2
            lam = u - j
            idx[k] = F_TARGET + j
            val[k] = 1.0 - lam
            idx[k + 1] = F_TARGET + j + 1
            val[k + 1] = lam
            k += 2
    for r in range(k, MAX_ACTIVE):
        idx[r] = 0
        val[r] = 0.0
    return k


_push_nb = njit(_push_py)
_featurize_nb = njit(_featurize_py)


def new_tracker():
    return np.zeros(6, dtype=np.int64)


# ---------------------------------------------------------------------------
# teacher-forced features

@njit
def _tf_features_nb(tokens, offsets, obs_count, obs_box):
    n = tokens.shape[0]
    idx = np.zeros((n, MAX_ACTIVE), dtype=np.int64)
    val = np.zeros((n, MAX_ACTIVE), dtype=np.float64)
    st = np.zeros(6, dtype=np.int64)
    for s in range(offsets.shape[0] - 1):
        st[:] = 0
        for p in range(offsets[s], offsets[s + 1]):
            _featurize_nb(st, obs_count[s], obs_box[s], idx[p], val[p])
            _push_nb(st, tokens[p])
    return idx, val


def _tf_features_np(tokens, offsets, obs_count, obs_box):
    n = tokens.shape[0]
    idx = np.zeros((n, MAX_ACTIVE), dtype=np.int64)
    val = np.zeros((n, MAX_ACTIVE), dtype=np.float64)
    for s in range(offsets.shape[0] - 1):
        st = new_tracker()
        for p in range(offsets[s], offsets[s + 1]):
            _featurize_py(st, obs_count[s], obs_box[s], idx[p], val[p])
            _push_py(st, int(tokens[p]))
    return idx, val


# ---------------------------------------------------------------------------
# Weights are stored feature-major, ``w[d, v]`` (the transpose of the logit
# matrix), so the sparse logit and gradient loops stream over the vocabulary.

@njit
def _logits_nb(w, idx_p, val_p, z):
    z[:] = 0.0
    for k in range(MAX_ACTIVE):
        x = val_p[k]
        if x != 0.0:
            row = w[idx_p[k]]
            for v in range(z.shape[0]):
                z[v] += x * row[v]


@njit
def _scatter_nb(grad, idx_p, val_p, g):
    for k in range(MAX_ACTIVE):
        x = val_p[k]
        if x != 0.0:
            row = grad[idx_p[k]]
            for v in range(g.shape[0]):
                row[v] += x * g[v]


@njit
def _log_softmax_nb(z, out):
    m = z.max()
    tot = 0.0
    for v in range(z.shape[0]):
        tot += np.exp(z[v] - m)
    lse = m + np.log(tot)
    for v in range(z.shape[0]):
        out[v] = z[v] - lse


def _dense(idx, val, d):
    phi = np.zeros((idx.shape[0], d))
    np.add.at(phi, (np.repeat(np.arange(idx.shape[0]), idx.shape[1]), idx.ravel()), val.ravel())
    return phi


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# supervised gradient

@njit
def _sft_grad_nb(w, idx, val, y):
    V = w.shape[1]
    n = idx.shape[0]
    grad = np.zeros_like(w)
    z = np.empty(V)
    loss = 0.0
    for p in range(n):
        _logits_nb(w, idx[p], val[p], z)
        m = z.max()
        zy = z[y[p]]
        tot = 0.0
        for v in range(V):
            z[v] = np.exp(z[v] - m)
            tot += z[v]
        loss -= zy - m - np.log(tot)
        scale = 1.0 / (tot * n)
        for v in range(V):
            z[v] *= scale
        z[y[p]] -= 1.0 / n
        _scatter_nb(grad, idx[p], val[p], z)
    return loss / n, grad


def _sft_grad_np(w, idx, val, y):
    phi = _dense(idx, val, w.shape[0])
    logp = _log_softmax(phi @ w)
    n = y.shape[0]
    loss = -logp[np.arange(n), y].mean()
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    return loss, phi.T @ g / n


# ---------------------------------------------------------------------------
# decoding

@njit
def _decode_nb(w, obs_count, obs_box, max_len, temperature, top_k, top_p, uniforms):
    V = w.shape[1]
    toks = np.zeros(max_len, dtype=np.int64)
    idx = np.zeros((max_len, MAX_ACTIVE), dtype=np.int64)
    val = np.zeros((max_len, MAX_ACTIVE), dtype=np.float64)
    st = np.zeros(6, dtype=np.int64)
    z = np.empty(V)
    n = 0
    for p in range(max_len):
        _featurize_nb(st, obs_count, obs_box, idx[p], val[p])
        _logits_nb(w, idx[p], val[p], z)
        if temperature <= 0.0:
            t = int(np.argmax(z))
        else:
            t = _sample_nb(z, temperature, top_k, top_p, uniforms[p])
        toks[p] = t
        n = p + 1
        if t == EOS:
            break
        _push_nb(st, t)
    return toks[:n], idx[:n], val[:n]


def _filtered_probs_py(z, temperature, top_k, top_p):
    V = z.shape[0]
    zz = z / temperature
    zz = zz - zz.max()
    prob = np.exp(zz)
    prob = prob / prob.sum()
    if (top_k > 0 and top_k < V) or top_p < 1.0:
        order = np.argsort(-prob, kind="mergesort")
        keep = V
        if top_k > 0 and top_k < keep:
            keep = top_k
        if top_p < 1.0:
            acc = 0.0
            for r in range(keep):
                # a token is kept while the mass ranked above it is below top_p
                if acc >= top_p:
                    keep = r
                    break
                acc += prob[order[r]]
        mask = np.zeros(V, dtype=np.bool_)
        for r in range(keep):
            mask[order[r]] = True
        prob = np.where(mask, prob, 0.0)
        prob = prob / prob.sum()
    return prob


_filtered_probs_nb = njit(_filtered_probs_py)


@njit
def _sample_nb(z, temperature, top_k, top_p, u):
    prob = _filtered_probs_nb(z, temperature, top_k, top_p)
    acc = 0.0
    last = 0
    for v in range(prob.shape[0]):
        if prob[v] > 0.0:
            acc += prob[v]
            last = v
            if u < acc:
                return v
    return last


def _sample_np(z, temperature, top_k, top_p, u):
    prob = _filtered_probs_py(z, temperature, top_k, top_p)
    v = int(np.searchsorted(np.cumsum(prob), u, side="right"))
    if v >= prob.shape[0]:
        # rounding left u above the total mass
        v = int(np.flatnonzero(prob)[-1])
    return v


def _decode_np(w, obs_count, obs_box, max_len, temperature, top_k, top_p, uniforms):
    toks = np.zeros(max_len, dtype=np.int64)
    idx = np.zeros((max_len, MAX_ACTIVE), dtype=np.int64)
    val = np.zeros((max_len, MAX_ACTIVE), dtype=np.float64)
    st = new_tracker()
    n = 0
    for p in range(max_len):
        _featurize_py(st, obs_count, obs_box, idx[p], val[p])
        z = val[p] @ w[idx[p]]
        if temperature <= 0.0:
            t = int(np.argmax(z))
        else:
            t = _sample_np(z, temperature, top_k, top_p, uniforms[p])
        toks[p] = t
        n = p + 1
        if t == EOS:
            break
        _push_py(st, t)
    return toks[:n], idx[:n], val[:n]


# ---------------------------------------------------------------------------
# policy-gradient pieces

@njit
def _token_stats_nb(w, ref, idx, val, y):
    """Per position: log pi(y), log pi_ref(y) and exact KL(pi || pi_ref)."""
    V = w.shape[1]
    n = idx.shape[0]
    logp = np.empty(n)
    logq = np.empty(n)
    kl = np.empty(n)
    z = np.empty(V)
    la = np.empty(V)
    lb = np.empty(V)
    for p in range(n):
        _logits_nb(w, idx[p], val[p], z)
        _log_softmax_nb(z, la)
        _logits_nb(ref, idx[p], val[p], z)
        _log_softmax_nb(z, lb)
        acc = 0.0
        for v in range(V):
            acc += np.exp(la[v]) * (la[v] - lb[v])
        logp[p] = la[y[p]]
        logq[p] = lb[y[p]]
        kl[p] = max(acc, 0.0)
    return logp, logq, kl


def _token_stats_np(w, ref, idx, val, y):
    phi = _dense(idx, val, w.shape[0])
    la = _log_softmax(phi @ w)
    lb = _log_softmax(phi @ ref)
    r = np.arange(y.shape[0])
    kl = np.maximum((np.exp(la) * (la - lb)).sum(axis=1), 0.0)
    return la[r, y], lb[r, y], kl


@njit
def _pg_accumulate_nb(w, ref, idx, val, y, wt, c, grad):
    """grad += sum_t phi_t outer [wt_t (onehot(y_t) - p_t) - c_t dKL_t/dz]."""
    V = w.shape[1]
    n = idx.shape[0]
    z = np.empty(V)
    la = np.empty(V)
    lb = np.empty(V)
    for p in range(n):
        _logits_nb(w, idx[p], val[p], z)
        _log_softmax_nb(z, la)
        _logits_nb(ref, idx[p], val[p], z)
        _log_softmax_nb(z, lb)
        kl = 0.0
        for v in range(V):
            pv = np.exp(la[v])
            d = la[v] - lb[v]
            la[v] = pv
            lb[v] = d
            kl += pv * d
        for v in range(V):
            z[v] = -wt[p] * la[v] - c[p] * la[v] * (lb[v] - kl)
        z[y[p]] += wt[p]
        _scatter_nb(grad, idx[p], val[p], z)


def _pg_accumulate_np(w, ref, idx, val, y, wt, c, grad):
    phi = _dense(idx, val, w.shape[0])
    la = _log_softmax(phi @ w)
    lb = _log_softmax(phi @ ref)
    p = np.exp(la)
    d = la - lb
    kl = (p * d).sum(axis=1, keepdims=True)
    g = -wt[:, None] * p - c[:, None] * p * (d - kl)
    g[np.arange(y.shape[0]), y] += wt
    grad += phi.T @ g


tf_features = pick(_tf_features_nb, _tf_features_np)
sft_grad = pick(_sft_grad_nb, _sft_grad_np)
decode = pick(_decode_nb, _decode_np)
token_stats = pick(_token_stats_nb, _token_stats_np)
pg_accumulate = pick(_pg_accumulate_nb, _pg_accumulate_np)

BACKENDS = {
    "numba": dict(tf_features=_tf_features_nb, sft_grad=_sft_grad_nb, decode=_decode_nb,
                  token_stats=_token_stats_nb, pg_accumulate=_pg_accumulate_nb),
    "numpy": dict(tf_features=_tf_features_np, sft_grad=_sft_grad_np, decode=_decode_np,
                  token_stats=_token_stats_np, pg_accumulate=_pg_accumulate_np),
}
