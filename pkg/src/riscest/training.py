"""RIS training patterns, orthogonal UE pilots and pilot-observation synthesis.

One training round holds T RIS patterns; under each pattern every one of the
K users sends one pilot symbol, so the pilot overhead is K*T symbol slots.
Patterns come from Hadamard rows and are constant within an element group,
which reduces the minimum identifiable T from N+1 to n_groups+1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization, ChannelStatistics, _crandn
from .errors import ConfigurationError, DomainError


class PatternOrthogonalityWarning(UserWarning):
    """Truncated Hadamard row sets can lose pattern-column orthogonality."""


def hadamard(order: int) -> np.ndarray:
    """Sylvester Hadamard matrix of the given power-of-two order, int entries."""
    if order < 1 or order & (order - 1) != 0:
        raise DomainError(f"Hadamard order must be a power of two, got {order}")
    h = np.array([[1]], dtype=np.int64)
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    return h


def contiguous_groups(n_elements: int, n_groups: int) -> list[np.ndarray]:
    """Partition 0..N-1 into n_groups equal contiguous index blocks."""
    if n_groups < 1 or n_elements % n_groups != 0:
        raise DomainError(
            f"group count {n_groups} must divide the element count {n_elements}"
        )
    size = n_elements // n_groups
    return [np.arange(g * size, (g + 1) * size) for g in range(n_groups)]


def tile_groups(n_x: int, n_y: int, tiles_x: int, tiles_y: int) -> list[np.ndarray]:
    """Rectangular sub-tile partition of an n_x-by-n_y grid (row-major in x)."""
    if n_x % tiles_x != 0 or n_y % tiles_y != 0:
        raise DomainError("tile counts must divide the grid dimensions")
    sx, sy = n_x // tiles_x, n_y // tiles_y
    groups = []
    for ty in range(tiles_y):
        for tx in range(tiles_x):
            rows = np.arange(ty * sy, (ty + 1) * sy)
            cols = np.arange(tx * sx, (tx + 1) * sx)
            groups.append((rows[:, None] * n_x + cols[None, :]).reshape(-1))
    return groups


def _check_partition(groups: list[np.ndarray], n_elements: int) -> None:
    sizes = {len(g) for g in groups}
    if len(sizes) != 1:
        raise DomainError("all groups must have equal size")
    flat = np.sort(np.concatenate(groups))
    if flat.shape[0] != n_elements or not np.array_equal(flat, np.arange(n_elements)):
        raise DomainError("groups must partition the element indices exactly")


def training_patterns(
    n_elements: int,
    n_groups: int,
    n_patterns: int,
    groups: list[np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Group-constant +-1 RIS patterns from Hadamard rows.

    Row t of the order-2^ceil(log2(T)) Hadamard matrix supplies
    [1, group_pattern_t] as its first n_groups+1 entries; each group value is
    then replicated across that group's elements.  Returns (patterns (T, N),
    group_patterns (T, N_G)) as complex arrays with unit-modulus entries.
    """
    if n_groups < 1 or n_elements % n_groups != 0:
        raise DomainError(f"{n_groups} groups do not divide N = {n_elements}")
    if n_patterns < n_groups + 1:
        raise ConfigurationError(
            f"need at least n_groups+1 = {n_groups + 1} patterns for "
            f"identifiability, got {n_patterns}"
        )
    if groups is None:
        groups = contiguous_groups(n_elements, n_groups)
    else:
        if len(groups) != n_groups:
            raise DomainError("groups list does not match the group count")
        _check_partition(groups, n_elements)
    order = 1 << max(0, int(np.ceil(np.log2(n_patterns))))
    order = max(order, 1 << int(np.ceil(np.log2(n_groups + 1))))
    if n_patterns & (n_patterns - 1) != 0:
        warnings.warn(
            f"T = {n_patterns} is not a power of two; the truncated Hadamard "
            "row set does not guarantee orthogonal pattern columns",
            PatternOrthogonalityWarning,
            stacklevel=2,
        )
    h = hadamard(order)
    group_patterns = h[:n_patterns, 1 : n_groups + 1].astype(complex)
    patterns = np.empty((n_patterns, n_elements), dtype=complex)
    for g, idx in enumerate(groups):
        patterns[:, idx] = group_patterns[:, g][:, None]
    return patterns, group_patterns


def pilot_sequences(n_users: int) -> np.ndarray:
    """K x K unit-modulus pilot matrix; row k is user k's per-slot symbols.

    Rows are DFT sequences, which keeps sum_i phi_k1[i] * conj(phi_k2[i])
    equal to K * delta(k1, k2) for any user count.
    """
    if n_users < 1:
        raise DomainError("need at least one user")
    k = np.arange(n_users)
    return np.exp(-2j * np.pi * np.outer(k, k) / n_users)


def pilot_overhead(n_users: int, n_elements: int, n_groups: int) -> tuple[int, int]:
    """(full, grouped) pilot overhead in symbol slots: K(N+1) and K(N_G+1)."""
    return n_users * (n_elements + 1), n_users * (n_groups + 1)


@dataclass
class TrainingConfig:
    """Training patterns, grouping partition, pilots and power levels.

    group_of maps each element to its group index; n_groups == N recovers
    the ungrouped protocol.  tau_p = K*T is the pilot overhead actually
    spent; coherence_slots is carried as metadata only.
    """

    n_patterns: int
    n_groups: int
    patterns: np.ndarray  # (T, N) unit modulus
    group_patterns: np.ndarray  # (T, N_G)
    pilot_matrix: np.ndarray  # (K, K)
    rho: np.ndarray  # (K,) pilot powers, watts
    sigma_w2: float  # noise power, watts
    groups: list[np.ndarray] = field(default_factory=list)
    coherence_slots: int | None = None

    def __post_init__(self):
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        n = self.patterns.shape[1]
        if n % self.n_groups != 0:
            raise ConfigurationError("group count must divide the element count")
        if self.n_patterns < self.n_groups + 1:
            raise ConfigurationError("T must be at least n_groups + 1")
        if not self.groups:
            self.groups = contiguous_groups(n, self.n_groups)
        _check_partition(self.groups, n)
        if np.max(np.abs(np.abs(self.patterns) - 1.0)) > 1e-12:
            raise ConfigurationError("pattern entries must be unit modulus")
        k = self.pilot_matrix.shape[0]
        gram = self.pilot_matrix @ self.pilot_matrix.conj().T
        if not np.allclose(gram, k * np.eye(k), atol=1e-10):
            raise ConfigurationError("pilot sequences are not orthogonal")
        if self.sigma_w2 < 0 or np.any(self.rho < 0):
            raise ConfigurationError("powers must be nonnegative")

    @property
    def n_users(self) -> int:
        return self.pilot_matrix.shape[0]

    @property
    def n_elements(self) -> int:
        return self.patterns.shape[1]

    @property
    def tau_p(self) -> int:
        return self.n_users * self.n_patterns

    @property
    def group_size(self) -> int:
        return self.n_elements // self.n_groups


def make_training_config(
    n_elements: int,
    n_users: int,
    n_groups: int | None = None,
    n_patterns: int | None = None,
    rho: float | np.ndarray = 1.0,
    sigma_w2: float = 1.0,
    groups: list[np.ndarray] | None = None,
) -> TrainingConfig:
    """Assemble a TrainingConfig with the minimum identifiable T by default."""
    n_groups = n_elements if n_groups is None else n_groups
    n_patterns = n_groups + 1 if n_patterns is None else n_patterns
    patterns, group_patterns = training_patterns(n_elements, n_groups, n_patterns, groups)
    rho_vec = np.full(n_users, float(rho)) if np.isscalar(rho) else np.asarray(rho, float)
    return TrainingConfig(
        n_patterns=n_patterns,
        n_groups=n_groups,
        patterns=patterns,
        group_patterns=group_patterns,
        pilot_matrix=pilot_sequences(n_users),
        rho=rho_vec,
        sigma_w2=sigma_w2,
        groups=groups if groups is not None else [],
    )


def _mixing_block(rho_b: float, rho_g: float, rho_a: float, pattern: np.ndarray, m: int) -> np.ndarray:
    """Per-pattern mixing [sqrt(rho_b) I_M, sqrt(rho_g rho_a) I_M (x) theta], (M, M(N+1))."""
    direct = np.sqrt(rho_b) * np.eye(m, dtype=complex)
    cascade = np.sqrt(rho_g * rho_a) * np.kron(np.eye(m, dtype=complex), pattern[None, :])
    return np.hstack([direct, cascade])


def build_Z(
    k: int,
    stats: ChannelStatistics,
    config: TrainingConfig,
    grouped: bool = False,
) -> np.ndarray:
    """Stacked observation matrix for user k, shape (M*T, M*(N+1)).

    With grouped=True the group patterns are used instead, giving
    (M*T, M*(n_groups+1)); the combining gain K is included.
    """
    m = stats.m_antennas
    pats = config.group_patterns if grouped else config.patterns
    blocks = [
        config.n_users
        * _mixing_block(stats.rho_b[k], stats.rho_g[k], stats.rho_a, pats[t], m)
        for t in range(config.n_patterns)
    ]
    return np.vstack(blocks)


@dataclass
class ObservationSet:
    """Raw per-slot observations plus per-user combined vectors and matrices.

    y_raw[t, i] is the BS vector in slot i of pattern t; noise_raw holds the
    matching AWGN draws so the linear model can be reconstructed exactly.
    """

    y_raw: np.ndarray  # (T, K, M)
    noise_raw: np.ndarray  # (T, K, M)
    y_combined: np.ndarray  # (K, M*T)
    Z: np.ndarray  # (K, M*T, M*(N+1))
    Z_G: np.ndarray  # (K, M*T, M*(n_groups+1))


def synthesize_received(
    realization: ChannelRealization,
    stats: ChannelStatistics,
    config: TrainingConfig,
    rng: np.random.Generator,
    z_full: np.ndarray | None = None,
    z_grouped: np.ndarray | None = None,
) -> ObservationSet:
    """Simulate the pilot phase and combine per-user observations.

    Per slot, every user's pilot rides through its cascaded channel under the
    active RIS pattern; combining with conjugated pilots isolates user k with
    combined noise covariance K*sigma_w2*I.  Noise is drawn once, so every
    estimator consuming this set sees identical observations.  z_full and
    z_grouped may be passed in to avoid rebuilding the per-user matrices in
    tight loops.
    """
    m, n = stats.m_antennas, stats.n_elements
    k_users, t_pats = config.n_users, config.n_patterns
    if realization.s.shape != (k_users, m * (n + 1)):
        raise ConfigurationError("realization does not match the configured sizes")
    if z_full is None:
        z_full = np.stack([build_Z(k, stats, config) for k in range(k_users)])
    if z_grouped is None:
        z_grouped = np.stack([build_Z(k, stats, config, grouped=True) for k in range(k_users)])

    # c[k, t] = sqrt(rho_k) * (per-slot mixing) @ s_k, before pilot scaling
    c = np.empty((k_users, t_pats, m), dtype=complex)
    for k in range(k_users):
        per_slot = z_full[k] / k_users  # the combining gain K is not present per slot
        c[k] = (np.sqrt(config.rho[k]) * (per_slot @ realization.s[k])).reshape(t_pats, m)

    noise = np.sqrt(config.sigma_w2) * _crandn(rng, (t_pats, k_users, m))
    phi = config.pilot_matrix  # (K, K), row k = user k
    y_raw = np.einsum("ktm,ki->tim", c, phi) + noise
    y_combined = np.einsum("tim,ki->ktm", y_raw, phi.conj()).reshape(k_users, t_pats * m)
    return ObservationSet(
        y_raw=y_raw, noise_raw=noise, y_combined=y_combined, Z=z_full, Z_G=z_grouped
    )
