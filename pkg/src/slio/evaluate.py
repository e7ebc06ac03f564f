"""Trajectory evaluation: stamp association, closed-form SE(3) alignment,
and translational APE statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PoseSE3


class EvaluationError(RuntimeError):
    """Association or alignment could not produce a result."""


@dataclass
class ApeReport:
    rmse: float
    mean: float
    median: float
    max: float
    count: int

    def lines(self) -> list[str]:
        return [f"rmse={self.rmse!r}",
                f"mean={self.mean!r}",
                f"median={self.median!r}",
                f"max={self.max!r}",
                f"count={self.count}"]


def associate(est: list[tuple[float, PoseSE3]],
              ref: list[tuple[float, PoseSE3]],
              max_dt: float = 0.02):
    """Nearest-stamp pairing within max_dt, each ref pose used at most once.

    Candidate pairs are resolved greedily by ascending |dt|, which is
    deterministic and order-independent. Returns a list of
    (est_pose, ref_pose) pairs; raises EvaluationError when empty.
    """
    if not est or not ref:
        raise EvaluationError("cannot associate empty trajectories")
    ref_stamps = np.array([t for t, _ in ref])
    candidates = []
    for i, (t, _) in enumerate(est):
        j = int(np.searchsorted(ref_stamps, t))
        for jj in (j - 1, j):
            if 0 <= jj < len(ref):
                dt = abs(ref_stamps[jj] - t)
                if dt <= max_dt:
                    candidates.append((dt, i, jj))
    candidates.sort()
    used_est: set[int] = set()
    used_ref: set[int] = set()
    pairs = []
    for _, i, j in candidates:
        if i in used_est or j in used_ref:
            continue
        used_est.add(i)
        used_ref.add(j)
        pairs.append((est[i][1], ref[j][1]))
    if not pairs:
        raise EvaluationError(f"no stamp pairs within {max_dt} s")
    return pairs


def align_se3(pairs) -> PoseSE3:
    """Least-squares rigid alignment T minimizing sum ||T p_est - p_ref||^2.

    Rotation from the SVD of the cross-covariance with reflection
    correction; no scale. Needs >= 3 non-collinear pairs.
    """
    if len(pairs) < 3:
        raise EvaluationError(f"alignment needs >= 3 pairs, got {len(pairs)}")
    p_est = np.array([p.translation for p, _ in pairs])
    p_ref = np.array([q.translation for _, q in pairs])
    mu_e = p_est.mean(axis=0)
    mu_r = p_ref.mean(axis=0)
    de = p_est - mu_e
    dr = p_ref - mu_r
    cov = dr.T @ de / len(pairs)
    u, s, vt = np.linalg.svd(cov)
    if s[1] < 1e-12 * max(s[0], 1e-300):
        raise EvaluationError("degenerate (collinear) trajectory, alignment ill-posed")
    d = np.sign(np.linalg.det(u @ vt))
    corr = np.diag([1.0, 1.0, d])
    rot = u @ corr @ vt
    trans = mu_r - rot @ mu_e
    return PoseSE3(rot, trans)


def ape_rmse(pairs, alignment: PoseSE3 | None = None) -> ApeReport:
    """Translational APE after applying the given alignment to the
    estimate. Pass PoseSE3.identity() (or None) to skip alignment."""
    if not pairs:
        raise EvaluationError("no pairs to evaluate")
    align = alignment if alignment is not None else PoseSE3.identity()
    p_est = np.array([p.translation for p, _ in pairs])
    p_ref = np.array([q.translation for _, q in pairs])
    err = np.linalg.norm(align.transform(p_est) - p_ref, axis=1)
    return ApeReport(
        rmse=float(np.sqrt(np.mean(err**2))),
        mean=float(err.mean()),
        median=float(np.median(err)),
        max=float(err.max()),
        count=int(err.shape[0]),
    )


def evaluate_ape(est, ref, max_dt: float = 0.02) -> ApeReport:
    """associate -> align -> APE in one call."""
    pairs = associate(est, ref, max_dt)
    return ape_rmse(pairs, align_se3(pairs))
