"""Closed-form moments of the cascaded channel, its group aggregates and the
pilot observation.

All moments are expressed for the unit-large-scale-power target vector
s = [b; a_1*g; ...; a_M*g]; the observation matrices carry the gains, which
keeps the direct-link block of the prior covariance at the identity whenever
that link exists.  A blocked direct link zeroes both the corresponding
observation columns and the prior block, so the unobservable coordinates
carry no phantom error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelStatistics
from .errors import DomainError
from .training import TrainingConfig, _check_partition, build_Z, contiguous_groups


@dataclass
class MomentSet:
    """Everything a linear estimator needs for one user.

    Shapes: mean_s (n_s,), cov_ss (n_s, n_s), cov_uu (n_u, n_u), mean_y
    (n_y,), cov_sy (n_s, n_y), cov_uy (n_u, n_y), cov_yy (n_y, n_y) with
    n_s = M(N+1), n_u = M(n_groups+1), n_y = M*T.  The observation matrices
    and scalar context ride along for estimator construction.
    """

    mean_s: np.ndarray
    cov_ss: np.ndarray
    cov_uu: np.ndarray
    mean_y: np.ndarray
    cov_sy: np.ndarray
    cov_uy: np.ndarray
    cov_yy: np.ndarray
    Z: np.ndarray
    Z_G: np.ndarray
    rho: float
    sigma_w2: float
    n_users: int
    m_antennas: int
    groups: list[np.ndarray]

    @property
    def group_size(self) -> int:
        return len(self.groups[0])


def mean_s(stats: ChannelStatistics, k: int) -> np.ndarray:
    """Mean of the cascaded target: LoS products scaled by both Rician weights."""
    ka, kg = stats.fading.kappa_a, stats.fading.kappa_g
    m, n = stats.m_antennas, stats.n_elements
    coef = np.sqrt(ka * kg / ((1.0 + ka) * (1.0 + kg)))
    cascade = coef * (stats.a_bar * stats.g_bar[k][None, :])  # (M, N)
    return np.concatenate([np.zeros(m, dtype=complex), cascade.reshape(-1)])


def _cascade_cov(
    a_bar: np.ndarray,
    g_bar_k: np.ndarray,
    r0: np.ndarray,
    rk: np.ndarray,
    kappa_a: float,
    kappa_g: float,
) -> np.ndarray:
    """(MN, MN) covariance of the stacked per-antenna cascades a_m * g."""
    m, n = a_bar.shape
    rg = rk / (1.0 + kappa_g)
    ra = r0 / (1.0 + kappa_a)
    g_outer = (kappa_g / (1.0 + kappa_g)) * np.outer(g_bar_k, g_bar_k.conj())
    same_antenna = ra * (g_outer + rg)  # elementwise products throughout
    # cross[m1, m2] = kappa_a/(1+kappa_a) * outer(a_m1, a_m2*) (.) rg
    cross = (kappa_a / (1.0 + kappa_a)) * np.einsum(
        "ip,jq->ijpq", a_bar, a_bar.conj()
    ) * rg[None, None, :, :]
    cross[np.arange(m), np.arange(m)] += same_antenna[None, :, :]
    return cross.transpose(0, 2, 1, 3).reshape(m * n, m * n)


def cov_ss(stats: ChannelStatistics, k: int, direct_present: bool | None = None) -> np.ndarray:
    """Prior covariance of the cascaded target for user k, shape (M(N+1), M(N+1)).

    The direct-link block is the identity when that link exists and zero when
    it is blocked (rho_b[k] == 0), matching what the sampler actually emits.
    """
    m, n = stats.m_antennas, stats.n_elements
    if direct_present is None:
        direct_present = stats.rho_b[k] > 0
    out = np.zeros((m * (n + 1), m * (n + 1)), dtype=complex)
    if direct_present:
        out[:m, :m] = np.eye(m)
    out[m:, m:] = _cascade_cov(
        stats.a_bar, stats.g_bar[k], stats.R0, stats.R[k],
        stats.fading.kappa_a, stats.fading.kappa_g,
    )
    return out


def cov_ss_block_ideal(
    stats: ChannelStatistics, k: int, groups: list[np.ndarray]
) -> np.ndarray:
    """Prior covariance under the idealized block-correlation model.

    Replaces both scattering correlation matrices with the block matrix that
    is all-ones within a group and zero across groups, i.e. the assumption
    that elements in a group share identical scattering while groups are
    independent.
    """
    n = stats.n_elements
    block = np.zeros((n, n), dtype=complex)
    for idx in groups:
        block[np.ix_(idx, idx)] = 1.0
    m = stats.m_antennas
    out = np.zeros((m * (n + 1), m * (n + 1)), dtype=complex)
    if stats.rho_b[k] > 0:
        out[:m, :m] = np.eye(m)
    out[m:, m:] = _cascade_cov(
        stats.a_bar, stats.g_bar[k], block, block,
        stats.fading.kappa_a, stats.fading.kappa_g,
    )
    return out


def group_aggregation_matrix(m_antennas: int, groups: list[np.ndarray], n_elements: int) -> np.ndarray:
    """Real matrix P with u = P (s - E[s]): direct block copied, groups summed.

    Shape (M(n_groups+1), M(N+1)).
    """
    _check_partition(groups, n_elements)
    n_groups = len(groups)
    p_g = np.zeros((n_groups, n_elements))
    for g, idx in enumerate(groups):
        p_g[g, idx] = 1.0
    out = np.zeros((m_antennas * (n_groups + 1), m_antennas * (n_elements + 1)))
    out[:m_antennas, :m_antennas] = np.eye(m_antennas)
    for m in range(m_antennas):
        rows = slice(m_antennas + m * n_groups, m_antennas + (m + 1) * n_groups)
        cols = slice(m_antennas + m * n_elements, m_antennas + (m + 1) * n_elements)
        out[rows, cols] = p_g
    return out


def group_expansion_matrix(m_antennas: int, groups: list[np.ndarray], n_elements: int) -> np.ndarray:
    """Equal-division expansion from group aggregates back to elements.

    The transpose of the aggregation matrix with each group row divided by
    its size; shape (M(N+1), M(n_groups+1)).
    """
    p = group_aggregation_matrix(m_antennas, groups, n_elements)
    expand = p.T.copy()
    expand[m_antennas:, m_antennas:] /= len(groups[0])
    return expand


def cov_uu(
    cov_ss_mat: np.ndarray,
    m_antennas: int,
    grouping: list[np.ndarray] | int,
) -> np.ndarray:
    """Covariance of the group-aggregate vector, by summing matched rows/columns.

    grouping may be an explicit partition or a group count (contiguous equal
    blocks).
    """
    n_s = cov_ss_mat.shape[0]
    n_elements = n_s // m_antennas - 1
    if isinstance(grouping, int):
        grouping = contiguous_groups(n_elements, grouping)
    p = group_aggregation_matrix(m_antennas, grouping, n_elements)
    return p @ cov_ss_mat @ p.T


def observation_moments(
    stats: ChannelStatistics,
    k: int,
    z_full: np.ndarray,
    z_grouped: np.ndarray,
    rho_k: float,
    sigma_w2: float,
    n_users: int,
    groups: list[np.ndarray] | None = None,
    cov_ss_mat: np.ndarray | None = None,
) -> MomentSet:
    """Complete the moment set for one user given its observation matrices."""
    if groups is None:
        n_g = z_grouped.shape[1] // stats.m_antennas - 1
        groups = contiguous_groups(stats.n_elements, n_g)
    if cov_ss_mat is None:
        cov_ss_mat = cov_ss(stats, k)
    mu_s = mean_s(stats, k)
    c_uu = cov_uu(cov_ss_mat, stats.m_antennas, groups)
    sqrt_rho = np.sqrt(rho_k)
    mean_y = sqrt_rho * (z_full @ mu_s)
    cov_sy = sqrt_rho * (cov_ss_mat @ z_full.conj().T)
    cov_uy_mat = sqrt_rho * (c_uu @ z_grouped.conj().T)
    n_y = z_full.shape[0]
    cov_yy = rho_k * (z_full @ cov_ss_mat @ z_full.conj().T) + n_users * sigma_w2 * np.eye(n_y)
    return MomentSet(
        mean_s=mu_s, cov_ss=cov_ss_mat, cov_uu=c_uu, mean_y=mean_y,
        cov_sy=cov_sy, cov_uy=cov_uy_mat, cov_yy=cov_yy,
        Z=z_full, Z_G=z_grouped, rho=rho_k, sigma_w2=sigma_w2,
        n_users=n_users, m_antennas=stats.m_antennas, groups=list(groups),
    )


def build_moments(
    stats: ChannelStatistics,
    k: int,
    config: TrainingConfig,
    block_ideal: bool = False,
) -> MomentSet:
    """Moment set for user k under a training configuration.

    block_ideal swaps in the idealized block-correlation prior used by the
    plain grouping baselines.
    """
    if config.n_elements != stats.n_elements or config.n_users != stats.n_users:
        raise DomainError("training configuration does not match the statistics")
    z_full = build_Z(k, stats, config)
    z_grouped = build_Z(k, stats, config, grouped=True)
    c_ss = (
        cov_ss_block_ideal(stats, k, config.groups)
        if block_ideal
        else cov_ss(stats, k)
    )
    return observation_moments(
        stats, k, z_full, z_grouped,
        rho_k=float(config.rho[k]), sigma_w2=config.sigma_w2,
        n_users=config.n_users, groups=config.groups, cov_ss_mat=c_ss,
    )
