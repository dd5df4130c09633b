"""Scenario definitions and flat key-value configuration files.

A scenario bundles the geometry, fading model, noise level and the BS
arrival angle.  Configs use INI sections [scenario], [sweep] and [output];
all *_db / *_dbm keys are converted to linear units at parse time
(x_linear = 10**(x_db/10), dBm with the additional -30 dB offset to watts).
Example: noise_dbm = -89 gives sigma_w2 = 10**((-89-30)/10) ~= 1.26e-12 W.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelStatistics, FadingParams, SystemGeometry, build_statistics
from .errors import ConfigurationError


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def dbm_to_watts(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


@dataclass
class Scenario:
    """Physical setup: geometry, fading, noise power and BS arrival angle."""

    geometry: SystemGeometry
    fading: FadingParams
    sigma_w2: float  # W
    psi: float  # BS arrival angle, rad
    name: str = "scenario"

    def statistics(self) -> ChannelStatistics:
        return build_statistics(self.geometry, self.fading, psi=self.psi)


@dataclass
class SweepSettings:
    """Sweep-level knobs shared by the CLI subcommands."""

    estimators: list[str] = field(default_factory=lambda: [
        "ls", "lmmse", "grouping_ls", "grouping_lmmse", "correlated_grouping_lmmse",
    ])
    n_groups: list[int] = field(default_factory=lambda: [16])
    snr_min_db: float = 0.0
    snr_max_db: float = 50.0
    snr_step_db: float = 5.0
    trials: int = 100
    seed: int = 20240901

    def snr_points(self) -> list[float]:
        if self.snr_step_db <= 0:
            raise ConfigurationError("snr_step_db must be positive")
        n = int(round((self.snr_max_db - self.snr_min_db) / self.snr_step_db)) + 1
        if n < 1:
            raise ConfigurationError("empty SNR range")
        return [self.snr_min_db + i * self.snr_step_db for i in range(n)]


@dataclass
class RunConfig:
    scenario: Scenario
    sweep: SweepSettings
    output_path: str | None = None


def default_scenario(wavelength: float = 0.1) -> Scenario:
    """Reference multi-user deployment: M=8, N=8x8, K=4, blocked direct links.

    BS at (0,0,15), RIS at (0,50,10), four UEs around y ~= 43 m; half-wave
    spacings, kappa_a = -20 dB, kappa_g = 3 dB, eta = 0.99 on every link.
    Only spacing-to-wavelength ratios matter, so wavelength is free.
    """
    geometry = SystemGeometry(
        bs_position=np.array([0.0, 0.0, 15.0]),
        ris_position=np.array([0.0, 50.0, 10.0]),
        ue_positions=np.array(
            [[-8.0, 44.0, 5.0], [-6.0, 42.0, 5.0], [6.0, 42.0, 5.0], [8.0, 44.0, 5.0]]
        ),
        n_x=8, n_y=8, m_antennas=8,
        delta_x=wavelength / 2, delta_y=wavelength / 2, delta_0=wavelength / 2,
        wavelength=wavelength,
    )
    fading = FadingParams(
        kappa_a=db_to_linear(-20.0),
        kappa_g=db_to_linear(3.0),
        alpha_a=2.5, alpha_g=2.2, alpha_b=3.0,
        rho_0=db_to_linear(-30.0),
        eta=np.full(5, 0.99),
        direct_blocked=True,
    )
    return Scenario(
        geometry=geometry, fading=fading,
        sigma_w2=dbm_to_watts(-89.0), psi=np.pi / 3, name="default",
    )


def desk_scenario(wavelength: float = 0.1, eta: float = 0.99) -> Scenario:
    """Scaled-down variant for fast test runs: M=4, N=4x4, K=2."""
    geometry = SystemGeometry(
        bs_position=np.array([0.0, 0.0, 15.0]),
        ris_position=np.array([0.0, 50.0, 10.0]),
        ue_positions=np.array([[-8.0, 44.0, 5.0], [8.0, 44.0, 5.0]]),
        n_x=4, n_y=4, m_antennas=4,
        delta_x=wavelength / 2, delta_y=wavelength / 2, delta_0=wavelength / 2,
        wavelength=wavelength,
    )
    fading = FadingParams(
        kappa_a=db_to_linear(-20.0),
        kappa_g=db_to_linear(3.0),
        alpha_a=2.5, alpha_g=2.2, alpha_b=3.0,
        rho_0=db_to_linear(-30.0),
        eta=np.full(3, eta),
        direct_blocked=True,
    )
    return Scenario(
        geometry=geometry, fading=fading,
        sigma_w2=dbm_to_watts(-89.0), psi=np.pi / 3, name="desk",
    )


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.replace(",", " ").split()])


def _parse_points(text: str) -> np.ndarray:
    rows = [r.strip() for r in text.split(";") if r.strip()]
    return np.array([_parse_vector(r) for r in rows])


def _get(section, key, cast, default=None, section_name=""):
    if key not in section:
        if default is None:
            raise ConfigurationError(f"missing required key [{section_name}] {key}")
        return default
    try:
        return cast(section[key])
    except (ValueError, ConfigurationError) as exc:
        raise ConfigurationError(f"bad value for [{section_name}] {key}: {exc}") from exc


def scenario_from_config(parser: configparser.ConfigParser) -> Scenario:
    if "scenario" not in parser:
        return default_scenario()
    sc = parser["scenario"]
    wavelength = _get(sc, "wavelength", float, 0.1, "scenario")
    geometry = SystemGeometry(
        bs_position=_get(sc, "bs_position", _parse_vector, np.array([0.0, 0.0, 15.0]), "scenario"),
        ris_position=_get(sc, "ris_position", _parse_vector, np.array([0.0, 50.0, 10.0]), "scenario"),
        ue_positions=_get(
            sc, "ue_positions", _parse_points,
            np.array([[-8.0, 44.0, 5.0], [-6.0, 42.0, 5.0], [6.0, 42.0, 5.0], [8.0, 44.0, 5.0]]),
            "scenario",
        ),
        n_x=_get(sc, "n_x", int, 8, "scenario"),
        n_y=_get(sc, "n_y", int, 8, "scenario"),
        m_antennas=_get(sc, "m_antennas", int, 8, "scenario"),
        delta_x=_get(sc, "delta_x", float, wavelength / 2, "scenario"),
        delta_y=_get(sc, "delta_y", float, wavelength / 2, "scenario"),
        delta_0=_get(sc, "delta_0", float, wavelength / 2, "scenario"),
        wavelength=wavelength,
    )
    k_users = geometry.n_users
    eta = _get(sc, "eta", _parse_vector, np.array([0.99]), "scenario")
    if eta.size == 1:
        eta = np.full(k_users + 1, eta[0])
    fading = FadingParams(
        kappa_a=db_to_linear(_get(sc, "kappa_a_db", float, -20.0, "scenario")),
        kappa_g=db_to_linear(_get(sc, "kappa_g_db", float, 3.0, "scenario")),
        alpha_a=_get(sc, "alpha_a", float, 2.5, "scenario"),
        alpha_g=_get(sc, "alpha_g", float, 2.2, "scenario"),
        alpha_b=_get(sc, "alpha_b", float, 3.0, "scenario"),
        rho_0=db_to_linear(_get(sc, "rho_0_db", float, -30.0, "scenario")),
        eta=eta,
        direct_blocked=_get(sc, "direct_blocked", lambda s: s.strip().lower() in ("1", "true", "yes"), True, "scenario"),
    )
    return Scenario(
        geometry=geometry, fading=fading,
        sigma_w2=dbm_to_watts(_get(sc, "noise_dbm", float, -89.0, "scenario")),
        psi=_get(sc, "psi", float, np.pi / 3, "scenario"),
        name=_get(sc, "name", str, "config", "scenario"),
    )


def load_config(path: str | None) -> RunConfig:
    """Load a RunConfig from an INI file; defaults reproduce the reference setup."""
    parser = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
        except OSError as exc:
            raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    scenario = scenario_from_config(parser)
    sweep = SweepSettings()
    if "sweep" in parser:
        sw = parser["sweep"]
        sweep = SweepSettings(
            estimators=_get(sw, "estimators", lambda s: s.split(), sweep.estimators, "sweep"),
            n_groups=_get(sw, "n_groups", lambda s: [int(t) for t in s.split()], sweep.n_groups, "sweep"),
            snr_min_db=_get(sw, "snr_min_db", float, sweep.snr_min_db, "sweep"),
            snr_max_db=_get(sw, "snr_max_db", float, sweep.snr_max_db, "sweep"),
            snr_step_db=_get(sw, "snr_step_db", float, sweep.snr_step_db, "sweep"),
            trials=_get(sw, "trials", int, sweep.trials, "sweep"),
            seed=_get(sw, "seed", int, sweep.seed, "sweep"),
        )
    output_path = None
    if "output" in parser and "path" in parser["output"]:
        output_path = parser["output"]["path"]
    return RunConfig(scenario=scenario, sweep=sweep, output_path=output_path)


def config_digest(config: RunConfig) -> str:
    """Short stable hash over the fully resolved configuration, for provenance."""
    buf = io.StringIO()
    sc, sw = config.scenario, config.sweep
    geo, fad = sc.geometry, sc.fading
    for key, value in [
        ("name", sc.name),
        ("bs", geo.bs_position.tolist()), ("ris", geo.ris_position.tolist()),
        ("ues", geo.ue_positions.tolist()),
        ("grid", [geo.n_x, geo.n_y, geo.m_antennas]),
        ("spacing", [geo.delta_x, geo.delta_y, geo.delta_0, geo.wavelength]),
        ("kappa", [fad.kappa_a, fad.kappa_g]),
        ("alpha", [fad.alpha_a, fad.alpha_g, fad.alpha_b]),
        ("rho0", fad.rho_0), ("eta", fad.eta.tolist()),
        ("blocked", fad.direct_blocked),
        ("sigma", sc.sigma_w2), ("psi", sc.psi),
        ("estimators", sw.estimators), ("groups", sw.n_groups),
        ("snr", [sw.snr_min_db, sw.snr_max_db, sw.snr_step_db]),
        ("trials", sw.trials), ("seed", sw.seed),
    ]:
        buf.write(f"{key}={value!r}\n")
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()[:16]
