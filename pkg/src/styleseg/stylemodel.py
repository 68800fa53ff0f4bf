"""Distribution model over realistic feature styles.

Styles observed from an EMA encoder accumulate in a fixed-capacity buffer.
When the buffer fills it is drained into streaming sufficient statistics, from
which per-channel distributions are maintained: a Gaussian for channel means
(Normal-Inverse-Gamma conjugate update, posterior-predictive moments) and a
Gamma for channel stds (method of moments blended with prior pseudo-samples).
Sampling is stratified: one draw per quantile stratum per channel, with an
independent per-channel permutation of the stratum-to-batch assignment.
"""

import numpy as np

from .special import GammaQuantileTable, gamma_inv_cdf, gaussian_inv_cdf

FORMAT_TAG = "styleseg.style-model/v1"


class StyleBuffer:
    """Fixed-capacity FIFO of per-channel (mean, std) style rows."""

    def __init__(self, num_channels: int, capacity: int = 256):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.num_channels = int(num_channels)
        self.capacity = int(capacity)
        self._means = []
        self._stds = []

    def __len__(self):
        return len(self._means)

    @property
    def full(self) -> bool:
        return len(self._means) >= self.capacity

    def add(self, means, stds) -> None:
        """Append a batch of style rows, both [B, C]. Excess beyond capacity is kept
        until the next drain; the buffer never silently drops rows."""
        means = np.asarray(means, dtype=float)
        stds = np.asarray(stds, dtype=float)
        if means.ndim == 1:
            means = means[None, :]
            stds = stds[None, :]
        if means.shape != stds.shape or means.shape[1] != self.num_channels:
            raise ValueError(f"style rows must be [B, {self.num_channels}]")
        if np.any(stds < 0):
            raise ValueError("std entries must be non-negative")
        for i in range(means.shape[0]):
            self._means.append(means[i].copy())
            self._stds.append(stds[i].copy())

    def drain(self):
        """Return all buffered rows as ([n, C], [n, C]) and empty the buffer."""
        if not self._means:
            return (np.zeros((0, self.num_channels)), np.zeros((0, self.num_channels)))
        means = np.stack(self._means)
        stds = np.stack(self._stds)
        self._means = []
        self._stds = []
        return means, stds

    def peek(self):
        if not self._means:
            return (np.zeros((0, self.num_channels)), np.zeros((0, self.num_channels)))
        return np.stack(self._means), np.stack(self._stds)


class GaussianChannelStats:
    """Streaming Normal-Inverse-Gamma estimate of per-channel Gaussians.

    Accumulates count / sum / sum-of-squares per channel and exposes the
    posterior-predictive location and spread, which shrink to the prior when
    data is scarce.
    """

    def __init__(self, num_channels: int, prior_mean: float = 0.0,
                 prior_kappa: float = 1.0, prior_alpha: float = 2.0,
                 prior_beta: float = 1.0):
        self.num_channels = int(num_channels)
        self.prior_mean = float(prior_mean)
        self.prior_kappa = float(prior_kappa)
        self.prior_alpha = float(prior_alpha)
        self.prior_beta = float(prior_beta)
        self.count = 0
        self.total = np.zeros(num_channels)
        self.total_sq = np.zeros(num_channels)

    def update(self, samples) -> None:
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != self.num_channels:
            raise ValueError(f"samples must be [n, {self.num_channels}]")
        self.count += samples.shape[0]
        self.total += samples.sum(axis=0)
        self.total_sq += (samples ** 2).sum(axis=0)

    def posterior(self):
        """(location, scale) per channel of the posterior-predictive Gaussian."""
        n = self.count
        kappa_n = self.prior_kappa + n
        alpha_n = self.prior_alpha + 0.5 * n
        if n == 0:
            mu_n = np.full(self.num_channels, self.prior_mean)
            beta_n = np.full(self.num_channels, self.prior_beta)
        else:
            xbar = self.total / n
            ss = np.maximum(self.total_sq - self.total ** 2 / n, 0.0)
            mu_n = (self.prior_kappa * self.prior_mean + self.total) / kappa_n
            beta_n = (self.prior_beta + 0.5 * ss
                      + self.prior_kappa * n * (xbar - self.prior_mean) ** 2 / (2.0 * kappa_n))
        scale = np.sqrt(beta_n * (kappa_n + 1.0) / (kappa_n * (alpha_n - 1.0)))
        return mu_n if isinstance(mu_n, np.ndarray) else np.full(self.num_channels, mu_n), scale


class GammaChannelStats:
    """Streaming Gamma fit of per-channel stds by blended method of moments.

    The prior acts as pseudo-samples with a fixed mean and variance, so early
    estimates stay near Gamma(mean 1, var 0.25) and the data takes over as
    observations accumulate.
    """

    def __init__(self, num_channels: int, pseudo_count: float = 10.0,
                 prior_mean: float = 1.0, prior_var: float = 0.25,
                 var_floor: float = 1e-8):
        self.num_channels = int(num_channels)
        self.pseudo_count = float(pseudo_count)
        self.prior_mean = float(prior_mean)
        self.prior_var = float(prior_var)
        self.var_floor = float(var_floor)
        self.count = 0
        self.total = np.zeros(num_channels)
        self.total_sq = np.zeros(num_channels)

    def update(self, samples) -> None:
        samples = np.asarray(samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != self.num_channels:
            raise ValueError(f"samples must be [n, {self.num_channels}]")
        if np.any(samples < 0):
            raise ValueError("Gamma-modeled samples must be non-negative")
        self.count += samples.shape[0]
        self.total += samples.sum(axis=0)
        self.total_sq += (samples ** 2).sum(axis=0)

    def posterior(self):
        """(shape, scale) per channel of the blended Gamma fit."""
        n_eff = self.pseudo_count + self.count
        mean = (self.pseudo_count * self.prior_mean + self.total) / n_eff
        second = (self.pseudo_count * (self.prior_var + self.prior_mean ** 2)
                  + self.total_sq) / n_eff
        var = np.maximum(second - mean ** 2, self.var_floor)
        mean = np.maximum(mean, np.sqrt(self.var_floor))
        shape = mean ** 2 / var
        scale = var / mean
        return shape, scale


class StyleReservoir:
    """Ring of the most recent style rows, re-used directly without fitting."""

    def __init__(self, num_channels: int, capacity: int = 256):
        self.num_channels = int(num_channels)
        self.capacity = int(capacity)
        self._means = np.zeros((0, num_channels))
        self._stds = np.zeros((0, num_channels))

    def __len__(self):
        return self._means.shape[0]

    @property
    def ready(self) -> bool:
        return len(self) > 0

    def add(self, means, stds) -> None:
        means = np.atleast_2d(np.asarray(means, dtype=float))
        stds = np.atleast_2d(np.asarray(stds, dtype=float))
        if means.shape != stds.shape or means.shape[1] != self.num_channels:
            raise ValueError(f"style rows must be [B, {self.num_channels}]")
        self._means = np.concatenate([self._means, means])[-self.capacity:]
        self._stds = np.concatenate([self._stds, stds])[-self.capacity:]

    def sample(self, batch_size: int, rng: np.random.Generator):
        if not self.ready:
            raise RuntimeError("style reservoir is empty")
        idx = rng.integers(0, len(self), size=batch_size)
        return self._means[idx].copy(), self._stds[idx].copy()


def sample_prior_styles(batch_size: int, num_channels: int, rng: np.random.Generator,
                        std_floor: float = 1e-5):
    """Styles drawn from the untrained priors: the uninformed baseline.

    Means follow the Gaussian prior predictive, stds the Gamma prior
    (mean 1, variance 0.25). No observed data involved.
    """
    gauss = GaussianChannelStats(num_channels)
    gamma = GammaChannelStats(num_channels)
    loc, spread = gauss.posterior()
    shape, scale = gamma.posterior()
    means = rng.normal(loc, spread, size=(batch_size, num_channels))
    stds = rng.gamma(shape, scale, size=(batch_size, num_channels))
    return means, np.maximum(stds, std_floor)


class StyleModel:
    """Buffered, incrementally fitted style distribution with stratified sampling.

    observe() feeds style rows into the buffer; a full buffer flushes into the
    channel statistics automatically. sample() draws a batch of (mean, std)
    styles from the fitted distributions, stratified over quantile bins.
    With pooled=True a single scalar Gaussian and Gamma are fitted across all
    channels instead of one pair per channel; sampling still stratifies and
    permutes per channel.
    """

    QUANTILE_CLIP = 1e-6
    STD_FLOOR = 1e-5

    def __init__(self, num_channels: int, buffer_capacity: int = 256,
                 quantile_table_size: int = 0, pooled: bool = False):
        self.num_channels = int(num_channels)
        self.pooled = bool(pooled)
        # pooled mode collapses all channels into one scalar stream per statistic
        stat_channels = 1 if self.pooled else self.num_channels
        self.buffer = StyleBuffer(num_channels, buffer_capacity)
        self.mean_stats = GaussianChannelStats(stat_channels)
        self.std_stats = GammaChannelStats(stat_channels)
        self.quantile_table_size = int(quantile_table_size)
        self._std_table = None
        self._table_stale = True

    @property
    def ready(self) -> bool:
        """True once at least one flush has populated the statistics."""
        return self.mean_stats.count > 0

    @property
    def num_observed(self) -> int:
        if self.pooled:
            return self.mean_stats.count // self.num_channels
        return self.mean_stats.count

    def observe(self, means, stds) -> None:
        """Add style rows; flushes automatically when the buffer fills."""
        self.buffer.add(means, stds)
        if self.buffer.full:
            self.flush()

    def flush(self) -> int:
        """Drain the buffer into the sufficient statistics. Returns rows flushed."""
        means, stds = self.buffer.drain()
        rows = means.shape[0]
        if rows == 0:
            return 0
        if self.pooled:
            means = means.reshape(-1, 1)
            stds = stds.reshape(-1, 1)
        self.mean_stats.update(means)
        self.std_stats.update(stds)
        self._table_stale = True
        return rows

    def _stratified_quantiles(self, batch_size: int, rng: np.random.Generator):
        # one uniform draw inside each of batch_size equal-probability strata,
        # independently per channel
        offsets = rng.random((batch_size, self.num_channels))
        strata = (np.arange(batch_size)[:, None] + offsets) / batch_size
        return np.clip(strata, self.QUANTILE_CLIP, 1.0 - self.QUANTILE_CLIP)

    def _permute_per_channel(self, values: np.ndarray, rng: np.random.Generator):
        # independent permutation of rows within each column
        perms = np.argsort(rng.random(values.shape), axis=0)
        return np.take_along_axis(values, perms, axis=0)

    def _std_quantile(self, p: np.ndarray, shape: np.ndarray, scale: np.ndarray):
        if self.quantile_table_size > 0:
            if self._table_stale or self._std_table is None:
                # one table row per sampled channel, even when the fit is pooled
                shape = np.broadcast_to(shape, (self.num_channels,))
                scale = np.broadcast_to(scale, (self.num_channels,))
                self._std_table = GammaQuantileTable(shape, scale,
                                                     size=self.quantile_table_size)
                self._table_stale = False
            return self._std_table.invert(p.T).T
        return gamma_inv_cdf(p, shape[None, :], scale[None, :])

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Draw a stratified batch of styles: (means [B, C], stds [B, C])."""
        if not self.ready:
            raise RuntimeError("style model has no flushed observations yet")
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        loc, spread = self.mean_stats.posterior()
        shape, scale = self.std_stats.posterior()

        p_mean = self._stratified_quantiles(batch_size, rng)
        means = loc[None, :] + spread[None, :] * gaussian_inv_cdf(p_mean)
        means = self._permute_per_channel(means, rng)

        p_std = self._stratified_quantiles(batch_size, rng)
        stds = self._std_quantile(p_std, shape, scale)
        stds = self._permute_per_channel(stds, rng)
        stds = np.maximum(stds, self.STD_FLOOR)
        return means, stds

    def state_dict(self) -> dict:
        buf_means, buf_stds = self.buffer.peek()
        return {
            "format": FORMAT_TAG,
            "num_channels": self.num_channels,
            "buffer_capacity": self.buffer.capacity,
            "quantile_table_size": self.quantile_table_size,
            "pooled": int(self.pooled),
            "mean_count": self.mean_stats.count,
            "mean_total": self.mean_stats.total,
            "mean_total_sq": self.mean_stats.total_sq,
            "mean_prior": np.array([self.mean_stats.prior_mean, self.mean_stats.prior_kappa,
                                    self.mean_stats.prior_alpha, self.mean_stats.prior_beta]),
            "std_count": self.std_stats.count,
            "std_total": self.std_stats.total,
            "std_total_sq": self.std_stats.total_sq,
            "std_prior": np.array([self.std_stats.pseudo_count, self.std_stats.prior_mean,
                                   self.std_stats.prior_var, self.std_stats.var_floor]),
            "buffer_means": buf_means,
            "buffer_stds": buf_stds,
        }

    def save(self, path) -> None:
        np.savez(path, **self.state_dict())

    @classmethod
    def from_state(cls, state: dict) -> "StyleModel":
        tag = str(np.asarray(state["format"]))
        if tag != FORMAT_TAG:
            raise ValueError(f"unrecognized style model format: {tag!r}")
        model = cls(int(state["num_channels"]),
                    buffer_capacity=int(state["buffer_capacity"]),
                    quantile_table_size=int(state["quantile_table_size"]),
                    pooled=bool(int(state.get("pooled", 0))))
        model.mean_stats.count = int(state["mean_count"])
        model.mean_stats.total = np.asarray(state["mean_total"], dtype=float).copy()
        model.mean_stats.total_sq = np.asarray(state["mean_total_sq"], dtype=float).copy()
        mp = np.asarray(state["mean_prior"], dtype=float)
        (model.mean_stats.prior_mean, model.mean_stats.prior_kappa,
         model.mean_stats.prior_alpha, model.mean_stats.prior_beta) = [float(v) for v in mp]
        model.std_stats.count = int(state["std_count"])
        model.std_stats.total = np.asarray(state["std_total"], dtype=float).copy()
        model.std_stats.total_sq = np.asarray(state["std_total_sq"], dtype=float).copy()
        sp = np.asarray(state["std_prior"], dtype=float)
        (model.std_stats.pseudo_count, model.std_stats.prior_mean,
         model.std_stats.prior_var, model.std_stats.var_floor) = [float(v) for v in sp]
        buf_means = np.asarray(state["buffer_means"], dtype=float)
        buf_stds = np.asarray(state["buffer_stds"], dtype=float)
        if buf_means.shape[0] > 0:
            model.buffer.add(buf_means, buf_stds)
        return model

    @classmethod
    def load(cls, path) -> "StyleModel":
        with np.load(path, allow_pickle=False) as data:
            state = {key: data[key] for key in data.files}
        return cls.from_state(state)
