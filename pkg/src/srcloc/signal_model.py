"""Forward sensing chain for one round.

Per sensor: isotropic power decay from the source, a real AWGN
observation of the signal amplitude, binary quantization against a
threshold, on-off-keyed transmission over a Rayleigh-fading channel,
and an energy detector at the fusion center.

Conditioned on the transmitted bit u, the received energy is
exponential with mean ``Eb*u + tau2``: the complex channel output is
circular Gaussian with total variance ``Eb*u^2 + tau2`` (real and
imaginary parts each carry half), and the squared magnitude of a
circular Gaussian is exponential with its total variance as mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .geometry import NetworkGeometry, SourceParams, distances

ArrayLike = Union[float, np.ndarray]


@dataclass
class SensorEnsembleConfig:
    """Per-sensor model parameters; scalars broadcast to all K sensors.

    d0     : reference distance of the power-decay model
    alpha  : power-decay exponent
    sigma2 : observation-noise variance(s)
    beta   : binary quantization threshold(s)
    eb     : transmit energy(ies) for bit 1
    tau2   : channel-noise variance(s)
    """

    d0: float
    alpha: float
    sigma2: ArrayLike
    beta: ArrayLike
    eb: ArrayLike
    tau2: ArrayLike

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError("d0 must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        for name in ("sigma2", "eb", "tau2"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_snr_db(
        cls,
        p0: float,
        obs_snr_db: ArrayLike,
        channel_snr_db: ArrayLike,
        tx_energy_db: ArrayLike,
        d0: float = 1.0,
        alpha: float = 2.0,
        beta: ArrayLike = 0.0,
    ) -> "SensorEnsembleConfig":
        """Build a config from the dB conventions used throughout.

        sigma2 = P0 * 10^(-obs_snr_db/10), eb = 10^(tx_energy_db/10),
        tau2 = eb * 10^(-channel_snr_db/10).
        """
        eb = 10.0 ** (np.asarray(tx_energy_db, dtype=float) / 10.0)
        return cls(
            d0=d0,
            alpha=alpha,
            sigma2=p0 * 10.0 ** (-np.asarray(obs_snr_db, dtype=float) / 10.0),
            beta=beta,
            eb=eb,
            tau2=eb * 10.0 ** (-np.asarray(channel_snr_db, dtype=float) / 10.0),
        )

    def with_beta(self, beta: ArrayLike) -> "SensorEnsembleConfig":
        """Copy of this config with the quantization threshold(s) replaced."""
        return replace(self, beta=beta)

    def resolved(self, K: int):
        """Per-sensor arrays (sigma2, beta, eb, tau2), each of length K."""
        out = []
        for name in ("sigma2", "beta", "eb", "tau2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim == 0:
                arr = np.full(K, float(arr))
            elif arr.shape != (K,):
                raise ValueError(
                    f"{name} has length {arr.shape[0]}, expected {K}"
                )
            out.append(arr)
        return tuple(out)


def received_power(P0: float, d0: float, alpha: float, d: ArrayLike) -> ArrayLike:
    """Source power observed at distance d: P0*(d0/d)^alpha, clamped at P0.

    The decay model only holds beyond the reference distance, so inside
    d0 the power saturates at P0 (bounded, continuous in d).
    """
    d = np.asarray(d, dtype=float)
    power = P0 * (d0 / np.maximum(d, d0)) ** alpha
    return float(power) if power.ndim == 0 else power


def sense(P_i: ArrayLike, sigma_i: ArrayLike, rng: np.random.Generator) -> ArrayLike:
    """Noisy amplitude observation sqrt(P_i) + N(0, sigma_i^2)."""
    P_i = np.asarray(P_i, dtype=float)
    return np.sqrt(P_i) + np.asarray(sigma_i) * rng.standard_normal(P_i.shape)


def quantize(r: ArrayLike, beta: ArrayLike):
    """Binary quantization: 1 when r >= beta (boundary maps to 1), else 0."""
    out = np.greater_equal(r, beta).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def transmit_and_detect(
    u: ArrayLike, eb: ArrayLike, tau2: ArrayLike, rng: np.random.Generator
) -> ArrayLike:
    """Received energy |h*sqrt(eb)*u + n|^2 for one OOK transmission.

    h is unit-power circular complex Gaussian (Rayleigh fading) and n is
    circular complex Gaussian with total variance tau2.
    """
    u = np.asarray(u, dtype=float)
    shape = u.shape
    h = _circular_gaussian(shape, 1.0, rng)
    n = _circular_gaussian(shape, np.asarray(tau2, dtype=float), rng)
    z = h * np.sqrt(eb) * u + n
    t = np.abs(z) ** 2
    return float(t) if t.ndim == 0 else t


def _circular_gaussian(shape, total_variance, rng):
    scale = np.sqrt(np.asarray(total_variance) / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)


def simulate_round(
    geom: NetworkGeometry,
    source: SourceParams,
    cfg: SensorEnsembleConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One sensing round: the (K,) vector of received energies at the FC."""
    sigma2, beta, eb, tau2 = cfg.resolved(geom.K)
    P = received_power(source.P0, cfg.d0, cfg.alpha, distances(geom, source))
    r = np.sqrt(P) + np.sqrt(sigma2) * rng.standard_normal(geom.K)
    u = np.greater_equal(r, beta)
    return transmit_and_detect(u, eb, tau2, rng)


def simulate_rounds(
    geom: NetworkGeometry,
    source: SourceParams,
    cfg: SensorEnsembleConfig,
    n_rounds: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batch of independent rounds, shape (n_rounds, K).

    Same distributions as repeated simulate_round calls, but drawn in a
    different order from the stream; use one or the other per stream.
    """
    sigma2, beta, eb, tau2 = cfg.resolved(geom.K)
    P = received_power(source.P0, cfg.d0, cfg.alpha, distances(geom, source))
    shape = (n_rounds, geom.K)
    r = np.sqrt(P) + np.sqrt(sigma2) * rng.standard_normal(shape)
    u = np.greater_equal(r, beta)
    h = _circular_gaussian(shape, 1.0, rng)
    n = _circular_gaussian(shape, tau2, rng)
    z = h * np.sqrt(eb) * u + n
    return np.abs(z) ** 2
