"""Speaker representation chain: UBM-GMM, total-variability i-vectors, LDA, scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, eigh
from scipy.special import logsumexp

VARIANCE_FLOOR_FRAC = 1e-4
MSTEP_RIDGE = 1e-10


def _rows(features) -> np.ndarray:
    return np.asarray(features.rows if hasattr(features, "rows") else features,
                      dtype=np.float64)


@dataclass
class GmmUbm:
    """Diagonal-covariance GMM; weights on the simplex, variances floored."""

    weights: np.ndarray          # (K,)
    means: np.ndarray            # (K, d)
    variances: np.ndarray        # (K, d)
    ll_history: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if np.any(self.variances <= 0.0):
            raise ValueError("variances must be strictly positive")

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def feat_dim(self) -> int:
        return self.means.shape[1]


@dataclass
class BaumWelchStats:
    """Zeroth/centered-first-order sufficient statistics for one utterance."""

    n: np.ndarray                # (K,)
    f: np.ndarray                # (K, d), centered by the UBM means

    def f_supervector(self) -> np.ndarray:
        return self.f.ravel()


@dataclass
class TotalVariabilityModel:
    m: np.ndarray                # (K*d,) UBM mean supervector
    t_mat: np.ndarray            # (K*d, rank)
    sigma: np.ndarray            # (K*d,) diagonal covariance supervector
    n_components: int
    feat_dim: int
    ll_history: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.t_mat.shape[1]


@dataclass
class LdaProjection:
    a: np.ndarray                # (in_dim, lda_dim)
    eigenvalues: np.ndarray      # (lda_dim,) descending
    s_b: np.ndarray = field(repr=False, default=None)
    s_w: np.ndarray = field(repr=False, default=None)  # operative (shrunk) matrix


def _log_gaussians(x: np.ndarray, ubm_or_means, variances=None) -> np.ndarray:
    """(N, K) log densities of diagonal Gaussians."""
    if variances is None:
        means, variances = ubm_or_means.means, ubm_or_means.variances
    else:
        means = ubm_or_means
    const = -0.5 * (means.shape[1] * np.log(2.0 * np.pi)
                    + np.sum(np.log(variances), axis=1))
    diff = x[:, None, :] - means[None, :, :]
    quad = -0.5 * np.sum(diff * diff / variances[None, :, :], axis=2)
    return const[None, :] + quad


def _em_iterations(x: np.ndarray, weights, means, variances, floor, iters):
    ll_history = []
    n_frames = x.shape[0]
    for _ in range(iters):
        log_joint = np.log(weights)[None, :] + _log_gaussians(x, means, variances)
        log_norm = logsumexp(log_joint, axis=1)
        ll_history.append(float(log_norm.sum()))
        gamma = np.exp(log_joint - log_norm[:, None])
        nk = gamma.sum(axis=0)
        safe = np.maximum(nk, 1e-300)
        new_means = (gamma.T @ x) / safe[:, None]
        second = (gamma.T @ (x * x)) / safe[:, None]
        new_vars = np.maximum(second - new_means ** 2, floor)
        occupied = nk > 1e-10
        means = np.where(occupied[:, None], new_means, means)
        variances = np.where(occupied[:, None], new_vars, variances)
        weights = nk / n_frames
    return weights, means, variances, ll_history


def train_ubm(features: list, n_components: int, iters: int = 20,
              split_iters: int = 3) -> GmmUbm:
    """EM for a diagonal GMM, initialized by binary splitting from one Gaussian.

    ll_history covers the final full-size EM phase and is non-decreasing.
    """
    x = np.concatenate([_rows(f) for f in features], axis=0)
    if x.shape[0] < n_components:
        raise ValueError("fewer frames than components")
    floor = VARIANCE_FLOOR_FRAC * np.maximum(x.var(axis=0), 1e-12)

    means = x.mean(axis=0, keepdims=True)
    variances = np.maximum(x.var(axis=0, keepdims=True), floor)
    weights = np.ones(1)
    while weights.size < n_components:
        take = min(weights.size, n_components - weights.size)
        order = np.argsort(weights)[::-1][:take]  # split the heaviest components
        delta = 0.1 * np.sqrt(variances[order])
        means = np.concatenate([means, means[order] + delta], axis=0)
        means[order] -= delta
        variances = np.concatenate([variances, variances[order]], axis=0)
        weights[order] /= 2.0
        weights = np.concatenate([weights, weights[order]])
        weights = weights / weights.sum()
        weights, means, variances, _ = _em_iterations(
            x, weights, means, variances, floor, split_iters)

    weights, means, variances, ll_history = _em_iterations(
        x, weights, means, variances, floor, iters)
    weights = weights / weights.sum()
    return GmmUbm(weights=weights, means=means, variances=variances,
                  ll_history=np.asarray(ll_history))


def accumulate_stats(ubm: GmmUbm, features) -> BaumWelchStats:
    """Per-utterance zeroth and centered first-order statistics under the UBM."""
    x = _rows(features)
    if x.size == 0:
        return BaumWelchStats(n=np.zeros(ubm.n_components),
                              f=np.zeros((ubm.n_components, ubm.feat_dim)))
    if x.shape[1] != ubm.feat_dim:
        raise ValueError("feature dimension mismatch")
    log_joint = np.log(ubm.weights)[None, :] + _log_gaussians(x, ubm)
    gamma = np.exp(log_joint - logsumexp(log_joint, axis=1)[:, None])
    n = gamma.sum(axis=0)
    f = gamma.T @ x - n[:, None] * ubm.means
    return BaumWelchStats(n=n, f=f)


def _tv_estep(t_mat, sigma, stats_list, feat_dim):
    """Posterior moments for all utterances plus M-step accumulators and evidence.

    Vectorized over utterances: L_u = I + sum_k N_uk G_k with the per-component
    Gram matrices G_k precomputed once per iteration.
    """
    rank = t_mat.shape[1]
    n_comp = stats_list[0].n.size
    t_over_sigma = t_mat / sigma[:, None]
    t_blocks = t_mat.reshape(n_comp, feat_dim, rank)
    ts_blocks = t_over_sigma.reshape(n_comp, feat_dim, rank)
    gram = np.einsum("kda,kdb->kab", ts_blocks, t_blocks)

    n_all = np.stack([st.n for st in stats_list])                   # (U, K)
    f_all = np.stack([st.f_supervector() for st in stats_list])     # (U, K*d)
    l_all = np.eye(rank)[None] + np.einsum("uk,kab->uab", n_all, gram)
    a_all = f_all @ t_over_sigma                                    # (U, R)
    cov_all = np.linalg.inv(l_all)
    w_all = np.einsum("uab,ub->ua", cov_all, a_all)
    _, logdet = np.linalg.slogdet(l_all)
    ll = float(np.sum(-0.5 * logdet + 0.5 * np.sum(a_all * w_all, axis=1)))
    eww = cov_all + np.einsum("ua,ub->uab", w_all, w_all)
    acc_a = np.einsum("uk,uab->kab", n_all, eww)
    acc_c = f_all.T @ w_all
    return acc_a, acc_c, ll, (w_all, cov_all)


def train_tv(stats_list: list[BaumWelchStats], ubm: GmmUbm, rank: int,
             iters: int = 20, seed: int = 0) -> TotalVariabilityModel:
    """EM for the low-rank supervector subspace; evidence is non-decreasing."""
    if len(stats_list) < rank:
        raise ValueError("need at least `rank` utterances")
    feat_dim = ubm.feat_dim
    sv_dim = ubm.n_components * feat_dim
    sigma = ubm.variances.ravel().copy()
    rng = np.random.default_rng(seed)
    t_mat, _ = np.linalg.qr(rng.standard_normal((sv_dim, rank)))

    ll_history = []
    for _ in range(iters):
        acc_a, acc_c, ll, _ = _tv_estep(t_mat, sigma, stats_list, feat_dim)
        ll_history.append(ll)
        for k in range(ubm.n_components):
            rows = slice(k * feat_dim, (k + 1) * feat_dim)
            a_k = acc_a[k]
            try:
                t_mat[rows] = np.linalg.solve(a_k, acc_c[rows].T).T
            except np.linalg.LinAlgError:
                ridge = a_k + MSTEP_RIDGE * np.eye(rank)
                t_mat[rows] = np.linalg.solve(ridge, acc_c[rows].T).T
    return TotalVariabilityModel(m=ubm.means.ravel().copy(), t_mat=t_mat,
                                 sigma=sigma, n_components=ubm.n_components,
                                 feat_dim=feat_dim,
                                 ll_history=np.asarray(ll_history))


def extract_ivector(tv: TotalVariabilityModel, stats: BaumWelchStats) -> np.ndarray:
    """Posterior-mean factor: w = (I + T' S^-1 N T)^-1 T' S^-1 f."""
    if stats.n.size != tv.n_components or stats.f.shape[1] != tv.feat_dim:
        raise ValueError("stats do not match the model")
    n_expand = np.repeat(stats.n, tv.feat_dim)
    t_over_sigma = tv.t_mat / tv.sigma[:, None]
    l_mat = np.eye(tv.rank) + (t_over_sigma * n_expand[:, None]).T @ tv.t_mat
    a_vec = t_over_sigma.T @ stats.f_supervector()
    return np.linalg.solve(l_mat, a_vec)


def posterior_covariance(tv: TotalVariabilityModel, stats: BaumWelchStats) -> np.ndarray:
    n_expand = np.repeat(stats.n, tv.feat_dim)
    t_over_sigma = tv.t_mat / tv.sigma[:, None]
    l_mat = np.eye(tv.rank) + (t_over_sigma * n_expand[:, None]).T @ tv.t_mat
    return np.linalg.inv(l_mat)


def train_lda(ivectors: list[tuple[np.ndarray, object]], lda_dim: int) -> LdaProjection:
    """Generalized-eigenproblem LDA on labelled i-vectors.

    S_b is the between-class scatter of class means, S_w the pooled
    within-class scatter; a singular S_w falls back to diagonal shrinkage.
    """
    labels = [lab for _, lab in ivectors]
    classes = sorted(set(labels), key=str)
    if len(classes) < 2:
        raise ValueError("need at least two speakers")
    if lda_dim > len(classes) - 1:
        raise ValueError("lda_dim must be <= n_speakers - 1")
    x = np.stack([np.asarray(w, dtype=np.float64) for w, _ in ivectors])
    dim = x.shape[1]
    mu = x.mean(axis=0)
    s_b = np.zeros((dim, dim))
    s_w = np.zeros((dim, dim))
    for cls in classes:
        member = x[[lab == cls for lab in labels]]
        if member.shape[0] < 2:
            raise ValueError("need at least two i-vectors per speaker")
        mu_c = member.mean(axis=0)
        centered = member - mu_c
        s_w += centered.T @ centered
        diff = mu_c - mu
        s_b += member.shape[0] * np.outer(diff, diff)

    s_w_used = s_w
    try:
        cho_factor(s_w)
    except np.linalg.LinAlgError:
        trace = np.trace(s_w)
        eps = 1e-6 * trace / dim if trace > 0 else 1e-12
        s_w_used = s_w + eps * np.eye(dim)
    vals, vecs = eigh(s_b, s_w_used)
    order = np.argsort(vals)[::-1][:lda_dim]
    return LdaProjection(a=vecs[:, order], eigenvalues=vals[order],
                         s_b=s_b, s_w=s_w_used)


def project_lda(proj: LdaProjection, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] != proj.a.shape[0]:
        raise ValueError("dimension mismatch")
    return proj.a.T @ w


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero vector")
    return float(np.dot(a, b) / (na * nb))


def identify(models: list[tuple[object, np.ndarray]], probe: np.ndarray):
    """Closest speaker model by cosine score; ties go to the earliest model."""
    if not models:
        raise ValueError("empty model list")
    scores = [cosine_score(ivec, probe) for _, ivec in models]
    return models[int(np.argmax(scores))][0]
