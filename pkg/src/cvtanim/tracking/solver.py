"""Soft association, data and prior energies, and the window solver.

The unknowns are one rigid transform per patch and frame plus the mean
pose.  Steps are left increments ``T <- exp(xi) T`` with ``xi = (w, v)``,
so a deformed point ``p`` moves to ``p + w x p + v`` to first order.  Every
accepted step lowers the energy evaluated with associations recomputed at
the new poses; this makes the recorded energy non-increasing.
"""
from __future__ import annotations

import logging
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve
from scipy.spatial import cKDTree

from ..errors import SolverDiverged
from ..geometry import quat_to_matrix, rigid_interpolate, se3_exp
from .types import Associations, Observations, Pose, PoseSequence, Template, TrackingConfig

log = logging.getLogger(__name__)

SIGMA_PRESWEEPS = 30


def deform_point(pose: Pose, k: int, x) -> np.ndarray:
    """Template position ``x`` of a point of patch ``k`` under ``pose``."""
    return pose[k].apply(np.asarray(x, dtype=float))


def pose_arrays(pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Stacked rotation matrices (K, 3, 3) and translations (K, 3)."""
    q = np.array([T.rotation for T in pose.transforms])
    t = np.array([T.translation for T in pose.transforms])
    return quat_to_matrix(q), t


def deformed_points(template: Template, pose: Pose) -> np.ndarray:
    R, t = pose_arrays(pose)
    k = template.point_patch
    return np.einsum("mij,mj->mi", R[k], template.points) + t[k]


def deformed_normals(template: Template, pose: Pose) -> np.ndarray:
    R, _ = pose_arrays(pose)
    return np.einsum("mij,mj->mi", R[template.point_patch], template.normals)


def render_template(template: Template, pose: Pose) -> Observations:
    """The template's own points, normals and depths deformed by ``pose``."""
    return Observations(deformed_points(template, pose), deformed_normals(template, pose),
                        template.depth.copy(), template.is_surface.copy())


def _resolve(template: Template, config: TrackingConfig) -> tuple[float, float, float]:
    r = template.mean_circumradius
    sigma = config.sigma_assoc if config.sigma_assoc is not None else 2.0 * r
    eps = config.depth_tol if config.depth_tol is not None else 1.5 * r
    return sigma, eps, math.cos(math.radians(config.theta_max_deg))


def _nearest_patches(X: np.ndarray, point_patch: np.ndarray, Y: np.ndarray, m: int) -> np.ndarray:
    """For each query, the ``m`` patches owning its nearest points (-1 pads)."""
    tree = cKDTree(X)
    k = min(len(X), 16 * m)
    _, idx = tree.query(Y, k=k)
    idx = idx.reshape(len(Y), k)
    lab = point_patch[idx]
    # first occurrence of each patch along the distance-sorted row
    first = np.ones_like(lab, dtype=bool)
    for j in range(1, k):
        first[:, j] = np.all(lab[:, :j] != lab[:, j:j + 1], axis=1)
    out = np.full((len(Y), m), -1, dtype=np.int64)
    rank = np.cumsum(first, axis=1) - 1
    rows, cols = np.nonzero(first & (rank < m))
    out[rows, rank[rows, cols]] = lab[rows, cols]
    return out


def associate(template: Template, pose: Pose, obs: Observations,
              config: TrackingConfig | None = None, sigma: float | None = None) -> Associations:
    """Soft assignment of each observation to its ``m_best`` nearest deformed patches.

    Patches are ranked by their nearest deformed point.  Per patch the
    candidate is the nearest compatible point: a surface point
    whose normal is within ``theta_max`` of the observed one, or an inner
    point whose depth differs by at most ``depth_tol``.  Gaussian weights are
    normalised over the retained candidates of each observation.  ``sigma``
    overrides the configured bandwidth.
    """
    config = config or TrackingConfig()
    sigma0, eps, cos_max = _resolve(template, config)
    sigma = sigma0 if sigma is None else sigma
    X = deformed_points(template, pose)
    N = deformed_normals(template, pose)
    K = template.n_patches
    O = len(obs)
    near = _nearest_patches(X, template.point_patch, obs.points, min(config.m_best, K))

    rows_o, rows_k, rows_q, rows_d2 = [], [], [], []
    for p in template.patches:
        o_ids = np.nonzero(np.any(near == p.id, axis=1))[0]
        if len(o_ids) == 0:
            continue
        q_ids = p.point_ids
        Y = obs.points[o_ids]
        d2 = np.sum((Y[:, None, :] - X[q_ids][None]) ** 2, axis=2)
        same = obs.is_surface[o_ids][:, None] == template.is_surface[q_ids][None]
        normal_ok = (obs.normals[o_ids] @ N[q_ids].T) >= cos_max - 1e-12
        depth_ok = np.abs(obs.depth[o_ids][:, None] - template.depth[q_ids][None]) <= eps
        ok = same & np.where(obs.is_surface[o_ids][:, None], normal_ok, depth_ok)
        d2 = np.where(ok, d2, np.inf)
        best = np.argmin(d2, axis=1)
        bd2 = d2[np.arange(len(o_ids)), best]
        rows_o.append(o_ids)
        rows_k.append(np.full(len(o_ids), p.id))
        rows_q.append(q_ids[best])
        rows_d2.append(bd2)
    if not rows_o:
        z = np.zeros(0, dtype=np.int64)
        return Associations(z, z, z, np.zeros(0), O)
    o = np.concatenate(rows_o)
    k = np.concatenate(rows_k)
    q = np.concatenate(rows_q)
    d2 = np.concatenate(rows_d2)
    order = np.lexsort((k, o))
    o, k, q, d2 = o[order], k[order], q[order], d2[order]
    finite = np.isfinite(d2)
    dmin = np.full(O, np.inf)
    np.minimum.at(dmin, o[finite], d2[finite])
    w = np.zeros(len(o))
    w[finite] = np.exp(-(d2[finite] - dmin[o[finite]]) / (2.0 * sigma * sigma))
    tot = np.bincount(o, weights=w, minlength=O)
    w[finite] /= tot[o[finite]]
    return Associations(o, k, q, w, O)


def data_energy(template: Template, pose: Pose, obs: Observations, assoc: Associations) -> float:
    """Weighted sum of squared distances between observations and their deformed points."""
    if len(assoc) == 0:
        return 0.0
    X = deformed_points(template, pose)
    r = obs.points[assoc.obs] - X[assoc.point]
    return float(np.sum(assoc.weight * np.einsum("ij,ij->i", r, r)))


class _PairRows:
    """Flattened (pair, point) rows of the pose distance, grouped by pair."""

    def __init__(self, template: Template):
        ks, ls, ids, seg = [], [], [], []
        for n, (k, l) in enumerate(template.pairs):
            q = np.concatenate([template.patches[k].point_ids, template.patches[l].point_ids])
            ks.append(np.full(len(q), k))
            ls.append(np.full(len(q), l))
            ids.append(q)
            seg.append(np.full(len(q), n))
        cat = (lambda a: np.concatenate(a) if a else np.zeros(0, dtype=np.int64))
        self.k, self.l, self.q, self.pair = cat(ks), cat(ls), cat(ids), cat(seg)
        self.x = template.points[self.q]
        self.n_pairs = len(template.pairs)
        self.pair_k = template.pairs[:, 0] if len(template.pairs) else np.zeros(0, dtype=np.int64)
        self.pair_l = template.pairs[:, 1] if len(template.pairs) else np.zeros(0, dtype=np.int64)

    def relative(self, R, t):
        """``T_l^-1 T_k x`` per row, together with ``p = T_k x``."""
        p = np.einsum("mij,mj->mi", R[self.k], self.x) + t[self.k]
        return np.einsum("mji,mj->mi", R[self.l], p - t[self.l]), p


def _pair_rows(template: Template) -> _PairRows:
    rows = template.__dict__.get("_pair_rows")
    if rows is None:
        rows = _PairRows(template)
        template._pair_rows = rows
    return rows


def pose_distance(template: Template, Ti: Pose, Tj: Pose) -> float:
    """Sum over ordered neighbouring patch pairs of relative-transform discrepancies."""
    rows = _pair_rows(template)
    if len(rows.q) == 0:
        return 0.0
    ri, _ = rows.relative(*pose_arrays(Ti))
    rj, _ = rows.relative(*pose_arrays(Tj))
    d = ri - rj
    return float(np.sum(d * d))


def prior_energy(template: Template, seq: PoseSequence) -> float:
    if seq.mean is None:
        raise ValueError("pose sequence has no mean pose")
    identity = Pose.identity(template.n_patches)
    return pose_distance(template, seq.mean, identity) + sum(
        pose_distance(template, P, seq.mean) for P in seq.poses)


# ---------------------------------------------------------------------------
# least squares machinery
# ---------------------------------------------------------------------------

def _point_jacobians(p: np.ndarray) -> np.ndarray:
    """``d p / d xi`` for left increments: ``[-[p]x, I]`` per point, shape (m, 3, 6)."""
    m = len(p)
    A = np.zeros((m, 3, 6))
    A[:, 0, 1], A[:, 0, 2] = p[:, 2], -p[:, 1]
    A[:, 1, 0], A[:, 1, 2] = -p[:, 2], p[:, 0]
    A[:, 2, 0], A[:, 2, 1] = p[:, 1], -p[:, 0]
    A[:, 0, 3] = A[:, 1, 4] = A[:, 2, 5] = 1.0
    return A


class _System:
    """Block-sparse Gauss-Newton normal equations over 6-dof variables."""

    def __init__(self, n_vars: int):
        self.n = n_vars
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.blocks: list[np.ndarray] = []
        self.g = np.zeros((n_vars, 6))

    def add_blocks(self, a, b, H) -> None:
        self.rows.append(np.asarray(a, dtype=np.int64).ravel())
        self.cols.append(np.asarray(b, dtype=np.int64).ravel())
        self.blocks.append(np.asarray(H).reshape(-1, 6, 6))

    def add_gradient(self, a, g) -> None:
        np.add.at(self.g, np.asarray(a, dtype=np.int64), g)

    def solve(self, mu: float) -> np.ndarray:
        d = 6 * self.n
        if self.blocks:
            a = np.concatenate(self.rows)
            b = np.concatenate(self.cols)
            H = np.concatenate(self.blocks)
        else:
            a = b = np.zeros(0, dtype=np.int64)
            H = np.zeros((0, 6, 6))
        ii, jj = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
        r = (6 * a[:, None, None] + ii).ravel()
        c = (6 * b[:, None, None] + jj).ravel()
        diag = np.zeros(d)
        on = a == b
        np.add.at(diag, (6 * a[on][:, None] + np.arange(6)).ravel(),
                  np.diagonal(H[on], axis1=1, axis2=2).ravel())
        scale = max(float(diag.max()) if diag.size else 1.0, 1e-12)
        idx = np.arange(d)
        M = coo_matrix((np.r_[H.ravel(), mu * (diag + 1e-9 * scale)], (np.r_[r, idx], np.r_[c, idx])),
                       shape=(d, d)).tocsc()
        return spsolve(M, -self.g.ravel())


def _apply_step(pose: Pose, xi: np.ndarray) -> Pose:
    return Pose(tuple(se3_exp(xi[6 * k:6 * k + 6]) @ T for k, T in enumerate(pose.transforms)))


def _segment_sum(values: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    """Sum of ``values`` rows per segment id in ``[0, n)``."""
    out = np.zeros((n,) + values.shape[1:])
    if len(seg) == 0:
        return out
    if np.any(seg[1:] < seg[:-1]):
        order = np.argsort(seg, kind="stable")
        seg, values = seg[order], values[order]
    starts = np.r_[0, np.nonzero(seg[1:] != seg[:-1])[0] + 1]
    out[seg[starts]] = np.add.reduceat(values, starts, axis=0)
    return out


def _gram(Ba: np.ndarray, Bb: np.ndarray) -> np.ndarray:
    return np.matmul(np.transpose(Ba, (0, 2, 1)), Bb)


def _add_pose_distance(sys: _System, template: Template, Ti: Pose, Tj: Pose,
                       var_i: int | None, var_j: int | None, weight: float) -> None:
    """Linearise ``weight * D(Ti, Tj)``; variable offsets ``None`` mean held fixed.

    Per row the Jacobian is ``+-R_l^T [-[p]x, I]`` for the ``k`` and ``l``
    transforms of each pose; blocks are summed per patch pair.
    """
    rows = _pair_rows(template)
    if len(rows.q) == 0 or (var_i is None and var_j is None):
        return
    K = template.n_patches
    Ri, ti = pose_arrays(Ti)
    Rj, tj = pose_arrays(Tj)
    rel_i, pi = rows.relative(Ri, ti)
    rel_j, pj = rows.relative(Rj, tj)
    r = rel_i - rel_j
    P = rows.n_pairs
    terms = []
    if var_i is not None:
        terms.append((var_i, np.matmul(np.transpose(Ri[rows.l], (0, 2, 1)), _point_jacobians(pi)), 1.0))
    if var_j is not None:
        terms.append((var_j, np.matmul(np.transpose(Rj[rows.l], (0, 2, 1)), _point_jacobians(pj)), -1.0))
    for v, B, s in terms:
        g = _segment_sum(weight * s * np.einsum("mij,mi->mj", B, r), rows.pair, P)
        sys.add_gradient(v * K + rows.pair_k, g)
        sys.add_gradient(v * K + rows.pair_l, -g)
    for a, (va, Ba, sa) in enumerate(terms):
        for vb, Bb, sb in terms[a:]:
            H = _segment_sum(weight * sa * sb * _gram(Ba, Bb), rows.pair, P)
            ka, la = va * K + rows.pair_k, va * K + rows.pair_l
            kb, lb = vb * K + rows.pair_k, vb * K + rows.pair_l
            blocks = [(ka, kb, H), (ka, lb, -H), (la, kb, -H), (la, lb, H)]
            if va != vb:
                Ht = np.transpose(H, (0, 2, 1))
                blocks += [(kb, ka, Ht), (lb, ka, -Ht), (kb, la, -Ht), (lb, la, Ht)]
            for x, y, h in blocks:
                sys.add_blocks(x, y, h)


def _add_data(sys: _System, template: Template, pose: Pose, obs: Observations,
              assoc: Associations, var: int) -> None:
    K = template.n_patches
    keep = assoc.weight > 0.0
    if not np.any(keep):
        return
    X = deformed_points(template, pose)
    o, k, q, w = assoc.obs[keep], assoc.patch[keep], assoc.point[keep], assoc.weight[keep]
    p = X[q]
    r = obs.points[o] - p
    J = -_point_jacobians(p)
    Hk = _segment_sum(_gram(J * w[:, None, None], J), k, K)
    gk = _segment_sum(np.einsum("m,mij,mi->mj", w, J, r), k, K)
    idx = var * K + np.arange(K)
    sys.add_blocks(idx, idx, Hk)
    sys.add_gradient(idx, gk)


def estimate_sigma(template: Template, pose: Pose, obs: Observations, assoc: Associations) -> float:
    """Maximum-likelihood isotropic bandwidth: weighted RMS residual per axis."""
    keep = assoc.weight > 0.0
    wsum = float(assoc.weight[keep].sum())
    if wsum <= 0.0:
        return math.inf
    return math.sqrt(data_energy(template, pose, obs, assoc) / (3.0 * wsum))


class _WindowProblem:
    """Energy and linearisation for poses of a window plus (optionally) the mean pose.

    Each frame keeps its own association bandwidth.  ``update_sigmas`` is the
    EM step: it re-estimates the bandwidths and only ever lowers them, which
    cannot raise the soft-weighted energy at fixed poses.
    """

    def __init__(self, template, frames, config, fixed_mean: Pose | None = None,
                 use_data: bool = True, targets=None, sigmas=None):
        self.t = template
        self.frames = frames
        self.config = config
        self.fixed_mean = fixed_mean
        self.use_data = use_data
        self.targets = targets
        self.lam = config.prior_weight
        sigma0, _, _ = _resolve(template, config)
        self.sigma_floor = config.sigma_floor * template.mean_circumradius
        self.sigmas = list(sigmas) if sigmas is not None else [sigma0] * len(frames)

    def update_sigmas(self, state: list[Pose], assocs) -> bool:
        if not self.use_data or not self.config.adapt_sigma:
            return False
        poses, _ = self.split(state)
        changed = False
        for f, (P, obs, a) in enumerate(zip(poses, self.frames, assocs)):
            new = min(self.sigmas[f], max(self.sigma_floor, estimate_sigma(self.t, P, obs, a)))
            if new < self.sigmas[f] * (1.0 - 1e-6):
                self.sigmas[f] = new
                changed = True
        return changed

    def n_frame_vars(self) -> int:
        return len(self.frames) if self.use_data else 0

    def split(self, state: list[Pose]):
        nf = self.n_frame_vars()
        poses = state[:nf]
        mean = state[nf] if self.fixed_mean is None else self.fixed_mean
        return poses, mean

    def energy(self, state: list[Pose]):
        poses, mean = self.split(state)
        assocs = []
        e = 0.0
        if self.use_data:
            for P, obs, sig in zip(poses, self.frames, self.sigmas):
                a = associate(self.t, P, obs, self.config, sig)
                assocs.append(a)
                e += data_energy(self.t, P, obs, a)
        if self.targets is not None:
            e += sum(pose_distance(self.t, T, mean) for T in self.targets)
        elif self.lam > 0.0:
            prior = pose_distance(self.t, mean, Pose.identity(self.t.n_patches)) if self.fixed_mean is None else 0.0
            prior += sum(pose_distance(self.t, P, mean) for P in poses)
            e += self.lam * prior
        return e, assocs

    def linearise(self, state: list[Pose], assocs) -> _System:
        poses, mean = self.split(state)
        nf = self.n_frame_vars()
        mean_var = None if self.fixed_mean is not None else nf
        sys = _System(len(state) * self.t.n_patches)
        if self.use_data:
            for f, (P, obs, a) in enumerate(zip(poses, self.frames, assocs)):
                _add_data(sys, self.t, P, obs, a, f)
        if self.targets is not None:
            for T in self.targets:
                _add_pose_distance(sys, self.t, T, mean, None, mean_var, 1.0)
            return sys
        if self.lam > 0.0:
            identity = Pose.identity(self.t.n_patches)
            if mean_var is not None:
                _add_pose_distance(sys, self.t, mean, identity, mean_var, None, self.lam)
            for f, P in enumerate(poses):
                _add_pose_distance(sys, self.t, P, mean, f, mean_var, self.lam)
        return sys


def _levenberg_marquardt(problem: _WindowProblem, state: list[Pose], iterations: int,
                         rel_tol: float = 1e-12, max_rejections: int = 12):
    """Damped Gauss-Newton with re-association; returns ``(state, energies)``.

    The association bandwidths are first settled at the initial poses, so
    that a wide default bandwidth cannot pull correctly placed patches.
    """
    K = problem.t.n_patches
    e, assocs = problem.energy(state)
    if not math.isfinite(e):
        raise SolverDiverged("non-finite initial energy")
    for _ in range(SIGMA_PRESWEEPS):
        if not problem.update_sigmas(state, assocs):
            break
        e, assocs = problem.energy(state)
    energies = [e]
    mu = 1e-4
    for _ in range(iterations):
        sys = problem.linearise(state, assocs)
        accepted = False
        for _ in range(max_rejections):
            xi = sys.solve(mu)
            if not np.all(np.isfinite(xi)):
                mu *= 10.0
                continue
            trial = [_apply_step(P, xi[6 * K * v:6 * K * (v + 1)]) for v, P in enumerate(state)]
            e_new, a_new = problem.energy(trial)
            if math.isfinite(e_new) and e_new <= e:
                accepted = True
                break
            mu *= 4.0
        if accepted:
            improvement = e - e_new
            state, e, assocs = trial, e_new, a_new
            mu = max(mu / 3.0, 1e-9)
        else:
            improvement = 0.0
        if problem.update_sigmas(state, assocs):
            e_new, a_new = problem.energy(state)
            improvement += e - e_new
            e, assocs = min(e, e_new), a_new
        elif not accepted:
            break
        energies.append(e)
        if improvement <= rel_tol * max(energies[0], 1e-300):
            break
    return state, energies


def mean_pose(template: Template, poses: list[Pose], iterations: int = 100, tol: float = 1e-8) -> Pose:
    """Pose minimising the summed pose distance to ``poses`` (defined up to a global motion)."""
    if not poses:
        raise ValueError("need at least one pose")
    config = TrackingConfig(prior_weight=1.0)
    problem = _WindowProblem(template, [], config, use_data=False, targets=list(poses))
    state, _ = _levenberg_marquardt(problem, [poses[0]], iterations, rel_tol=tol)
    return state[0]


def track_window(template: Template, frames: list[Observations], config: TrackingConfig,
                 init: Pose | PoseSequence | None = None) -> PoseSequence:
    """Jointly estimate the poses of a window of frames and its mean pose.

    A sequential pass first fits each frame from the previous one.  The joint
    solve then minimises data plus ``prior_weight`` times the prior.
    """
    if not frames:
        raise ValueError("no frames")
    K = template.n_patches
    if init is None:
        start = Pose.identity(K)
    elif isinstance(init, PoseSequence):
        start = init.poses[-1]
    else:
        start = init
    poses, sigmas = [], []
    prev = start
    for obs in frames:
        single = _WindowProblem(template, [obs], config, fixed_mean=prev)
        (fitted,), _ = _levenberg_marquardt(single, [prev], config.warm_start_iterations)
        poses.append(fitted)
        sigmas.append(single.sigmas[0])
        prev = fitted
    mean0 = mean_pose(template, poses, iterations=20)
    problem = _WindowProblem(template, frames, config, sigmas=sigmas)
    state, energies = _levenberg_marquardt(problem, poses + [mean0], config.outer_iterations)
    log.debug("window energies %s", energies)
    return PoseSequence(state[:-1], state[-1], energies)


def track_sequence(template: Template, frames: list[Observations], config: TrackingConfig,
                   init: Pose | None = None) -> list[PoseSequence]:
    """Track consecutive windows, each started from the previous window's last pose."""
    out = []
    prev = init
    for s in range(0, len(frames), config.window):
        seq = track_window(template, frames[s:s + config.window], config, prev)
        out.append(seq)
        prev = seq.poses[-1]
    return out


def resample_poses(seq: PoseSequence, capture_dt: float, sim_dt: float) -> PoseSequence:
    """Per-patch rigid interpolation of a captured sequence at step ``sim_dt``."""
    if sim_dt <= 0.0 or capture_dt <= 0.0:
        raise ValueError("time steps must be positive")
    F = len(seq.poses)
    duration = (F - 1) * capture_dt
    n_out = int(math.floor(duration / sim_dt + 1e-9)) + 1
    poses = []
    times = np.arange(n_out) * sim_dt
    for t in times:
        u = t / capture_dt
        i = int(math.floor(u + 1e-9))
        s = u - i
        if abs(s) < 1e-9 or i >= F - 1:
            poses.append(seq.poses[min(i, F - 1)])
            continue
        s = min(max(s, 0.0), 1.0)
        A, B = seq.poses[i], seq.poses[i + 1]
        poses.append(Pose(tuple(rigid_interpolate(a, b, s) for a, b in zip(A.transforms, B.transforms))))
    return PoseSequence(poses, seq.mean, list(seq.energies), times)


def cell_acquired_poses(template: Template, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Acquired cell centres and rotations (w, x, y, z) under ``pose``."""
    c = template.cvt.centroids
    pos = np.empty_like(c)
    rot = np.empty((len(c), 4))
    for p in template.patches:
        T = pose[p.id]
        pos[p.cells] = T.apply(c[p.cells])
        rot[p.cells] = T.rotation
    return pos, rot


__all__ = [
    "associate", "cell_acquired_poses", "data_energy", "deform_point", "deformed_normals",
    "deformed_points", "mean_pose", "pose_distance", "prior_energy", "resample_poses",
    "track_sequence", "track_window",
]
