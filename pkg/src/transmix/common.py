"""Shared pieces of the EM machinery: options, reports, posterior containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FLOOR_REL = 1e-6
FLOOR_ABS = 1e-12


class UnderflowError(ArithmeticError):
    """All discrete configurations underflowed despite log-domain math."""


def variance_floor(data: np.ndarray, override: float | None = None) -> float:
    """Floor applied to all variances after every M-step.

    Relative to the global pixel variance of the batch so it adapts to the
    data scale; a tiny absolute floor guards constant data.
    """
    if override is not None:
        return float(override)
    return max(FLOOR_REL * float(np.var(data)), FLOOR_ABS)


@dataclass
class EmOptions:
    """Knobs for a single EM step.  Fields irrelevant to a family are ignored.

    freeze_rho        keep transformation probabilities at their current value
    tie_psi           average sensor variances to one scalar after the update
    freeze_pi         keep mixing proportions fixed
    floor             variance floor override (default: relative to the data)
    rescue_threshold  responsibility mass per cluster (fraction of the batch)
                      below which the cluster is reseeded from a random datum
    seed              RNG seed for rescues (kept in options for determinism)
    tangent_directions  TCA/MTCA: leading loading columns pinned to template
                      derivatives along these directions, recomputed each
                      M-step instead of learned
    refresh_tangent   set False to keep tangent columns fixed at their
                      initial values
    clamp_motion      THMM: fixed motion table (per the model's mode/shape);
                      the M-step leaves it untouched
    freeze_motion     THMM: keep the current motion table
    joint_pi          THMM: learn the full initial state table instead of the
                      factorized class-marginal x uniform-shift default
    """

    freeze_rho: bool = False
    tie_psi: bool = False
    freeze_pi: bool = False
    floor: float | None = None
    rescue_threshold: float = 1e-6
    seed: int = 0
    tangent_directions: Sequence[str] = ()
    refresh_tangent: bool = True
    clamp_motion: np.ndarray | None = None
    freeze_motion: bool = False
    joint_pi: bool = False


@dataclass(eq=False)
class StepReport:
    """One EM iteration, as streamed by the trainers."""

    iteration: int
    loglik: float
    cluster_mass: tuple[float, ...]
    rescued: tuple[int, ...] = ()

    def to_line(self) -> str:
        mass = " ".join(f"{m:.6g}" for m in self.cluster_mass)
        resc = ",".join(str(i) for i in self.rescued) if self.rescued else "-"
        return f"{self.iteration} {self.loglik:.10g} [{mass}] {resc}"


@dataclass(eq=False)
class PosteriorSummary:
    """Posterior for one image: discrete responsibilities plus latent moments.

    resp        P(l, c | x) as (L, C), or P(l | x) as (L,) for TCA
    z_mean      posterior latent-image mean per discrete configuration
    z_var_diag  matching diagonal posterior variances
    y_mean      factor posterior means (TCA/MTCA), None otherwise
    y_cov       factor posterior covariances, None otherwise
    loglik      log p(x) under the model
    """

    resp: np.ndarray
    z_mean: np.ndarray
    z_var_diag: np.ndarray
    loglik: float
    y_mean: np.ndarray | None = None
    y_cov: np.ndarray | None = None


@dataclass(eq=False)
class SequencePosterior:
    """Smoothed posterior for one frame sequence.

    gamma      (T, C, L) smoothed state marginals
    xi_class   (C, C) expected class-transition counts
    xi_motion  expected relative-motion counts, pooled per bin (and per class
               when the motion prior is class-conditional); same layout as
               the model's motion table
    map_path   (T, 2) Viterbi (class, transform) indices
    loglik     log p(x_1..T)
    """

    gamma: np.ndarray
    xi_class: np.ndarray
    xi_motion: np.ndarray
    map_path: np.ndarray
    loglik: float


def gaussian_template_stats(transforms, mu, phi, psi, X, W):
    """Weighted posterior-moment sums for one latent template.

    For each datum t and op l, the latent posterior given (x_t, l) is the
    diagonal Gaussian with precision 1/phi + G^T diag(1/psi) G and mean
    precision-weighted between the template and the back-projected datum.
    Accumulates, with weights ``W[t, l]``:

      s1      sum of E[z]                      (n,)
      s2      sum of E[z]^2 + Var[z]           (n,)
      s_psi   sum of (x - G E[z])^2 + G Var[z] (n,)  in observed coordinates

    plus the total weight.  These are exactly the statistics the template,
    latent-variance and sensor-variance updates need.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    n = transforms.shape.n
    src_all = transforms.source_matrix
    dst_all = transforms.dest_matrix
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    s_psi = np.zeros(n)
    mass = 0.0
    prior_prec = 1.0 / phi
    for l in range(transforms.L):
        w = W[:, l]
        src, dst = src_all[l], dst_all[l]
        observed = dst >= 0
        dst_safe = np.where(observed, dst, 0)
        psi_back = psi[dst_safe]
        prec = prior_prec + np.where(observed, 1.0 / psi_back, 0.0)
        var_z = 1.0 / prec
        num = mu * prior_prec + np.where(observed, X[:, dst_safe] / psi_back, 0.0)
        e_z = num * var_z
        mass += w.sum()
        s1 += w @ e_z
        s2 += w @ np.square(e_z) + w.sum() * var_z
        valid = src >= 0
        src_safe = np.where(valid, src, 0)
        resid = np.where(valid, X - e_z[:, src_safe], X) ** 2
        resid += np.where(valid, var_z[src_safe], 0.0)
        s_psi += w @ resid
    return mass, s1, s2, s_psi
