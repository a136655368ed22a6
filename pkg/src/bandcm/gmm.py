"""Diagonal-covariance Gaussian mixture models trained by EM.

A countermeasure is a pair of mixtures, one for bona fide and one for
spoofed speech, scored as the difference of frame-averaged log-likelihoods
(high scores mean bona fide). Training is deterministic given a seed:
k-means++ seeding, a few Lloyd iterations, then EM with a per-dimension
variance floor and re-seeding of emptied components.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, TrainingError

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GmmModel:
    """Mixture weights plus per-component diagonal Gaussians."""

    weights: np.ndarray      # (K,)
    means: np.ndarray        # (K, dims)
    variances: np.ndarray    # (K, dims), strictly positive

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        means = np.asarray(self.means, dtype=float)
        variances = np.asarray(self.variances, dtype=float)
        if weights.ndim != 1 or means.ndim != 2 or variances.shape != means.shape:
            raise DataError("inconsistent GMM parameter shapes")
        if weights.size != means.shape[0]:
            raise DataError("weight count does not match component count")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(means))
                and np.all(np.isfinite(variances))):
            raise DataError("GMM parameters must be finite")
        if abs(weights.sum() - 1.0) > 1e-10:
            raise DataError(f"weights sum to {weights.sum()!r}, not 1")
        if np.any(variances <= 0):
            raise DataError("variances must be strictly positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dims(self) -> int:
        return self.means.shape[1]

    def log_densities(self, frames: np.ndarray) -> np.ndarray:
        """Per-frame, per-component log of weight * Gaussian density, (n, K)."""
        frames = np.asarray(frames, dtype=float)
        if frames.ndim != 2 or frames.shape[1] != self.dims:
            raise DataError(
                f"feature dims {frames.shape[-1] if frames.ndim else '?'} "
                f"do not match model dims {self.dims}"
            )
        inv_var = 1.0 / self.variances
        const = (
            np.log(self.weights)
            - 0.5 * (self.dims * _LOG_2PI + np.sum(np.log(self.variances), axis=1))
            - 0.5 * np.sum(self.means**2 * inv_var, axis=1)
        )
        quad = -0.5 * (frames**2) @ inv_var.T + frames @ (self.means * inv_var).T
        return const[None, :] + quad


@dataclass
class EmOptions:
    """Knobs for EM training; defaults are the declared conventions."""

    max_iters: int = 100
    tol: float = 1e-5
    variance_floor_factor: float = 1e-3
    kmeans_iters: int = 10
    seed: int = 0


@dataclass
class EmTrace:
    """Per-iteration snapshots recorded during training, for diagnostics."""

    avg_log_likelihood: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    variances: list = field(default_factory=list)
    variance_floor: np.ndarray | None = None


def _stack_features(features) -> np.ndarray:
    if isinstance(features, np.ndarray) and features.ndim == 2:
        return np.asarray(features, dtype=float)
    mats = [np.asarray(f, dtype=float) for f in features]
    if not mats:
        raise TrainingError("no training features supplied")
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise DataError(f"inconsistent feature dims across utterances: {sorted(dims)}")
    return np.vstack(mats)


def _kmeans(frames: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding followed by a fixed number of Lloyd iterations."""
    n = frames.shape[0]
    centres = np.empty((k, frames.shape[1]))
    centres[0] = frames[rng.integers(n)]
    sq_dist = np.sum((frames - centres[0]) ** 2, axis=1)
    for i in range(1, k):
        total = sq_dist.sum()
        if total <= 0:
            centres[i] = frames[rng.integers(n)]
            continue
        centres[i] = frames[rng.choice(n, p=sq_dist / total)]
        sq_dist = np.minimum(sq_dist, np.sum((frames - centres[i]) ** 2, axis=1))

    for _ in range(iters):
        dists = (
            np.sum(frames**2, axis=1)[:, None]
            - 2.0 * frames @ centres.T
            + np.sum(centres**2, axis=1)[None, :]
        )
        assign = np.argmin(dists, axis=1)
        for j in range(k):
            members = assign == j
            if members.any():
                centres[j] = frames[members].mean(axis=0)
            else:
                centres[j] = frames[np.argmax(np.min(dists, axis=1))]
    return centres


def train_gmm(
    features,
    k: int,
    options: EmOptions | None = None,
    trace: EmTrace | None = None,
) -> GmmModel:
    """Fit a K-component diagonal GMM by EM.

    `features` is a (frames, dims) matrix or a collection of them (stacked).
    Training needs at least 10 frames per component. The average per-frame
    log-likelihood is non-decreasing over iterations; weights stay on the
    simplex and variances above the floor after every update. Passing an
    EmTrace records those quantities per iteration.
    """
    options = options or EmOptions()
    frames = _stack_features(features)
    n, dims = frames.shape
    if n < 10 * k:
        raise TrainingError(f"need at least {10 * k} frames to train K={k}, got {n}")

    global_var = np.var(frames, axis=0)
    floor = np.maximum(options.variance_floor_factor * global_var, 1e-12)
    if trace is not None:
        trace.variance_floor = floor

    rng = np.random.default_rng(options.seed)
    means = _kmeans(frames, k, options.kmeans_iters, rng)
    dists = (
        np.sum(frames**2, axis=1)[:, None]
        - 2.0 * frames @ means.T
        + np.sum(means**2, axis=1)[None, :]
    )
    assign = np.argmin(dists, axis=1)
    weights = np.bincount(assign, minlength=k).astype(float)
    weights = np.maximum(weights, 1.0)
    weights /= weights.sum()
    variances = np.empty((k, dims))
    for j in range(k):
        members = assign == j
        variances[j] = np.var(frames[members], axis=0) if members.any() else global_var
    variances = np.maximum(variances, floor)
    model = GmmModel(weights, means, variances)

    def record(avg_ll: float) -> None:
        if trace is not None:
            trace.avg_log_likelihood.append(avg_ll)
            trace.weights.append(model.weights.copy())
            trace.variances.append(model.variances.copy())

    log_dens = model.log_densities(frames)
    per_frame = logsumexp(log_dens, axis=1)
    avg_ll = float(per_frame.mean())
    record(avg_ll)

    for _ in range(options.max_iters):
        log_resp = log_dens - per_frame[:, None]
        resp = np.exp(log_resp)
        counts = resp.sum(axis=0)

        empty = counts < 1e-6
        if empty.any():
            # re-seed dead components at the worst-modelled frames
            order = np.argsort(per_frame)
            means_new = (resp.T @ frames) / np.maximum(counts, 1e-6)[:, None]
            var_new = (resp.T @ frames**2) / np.maximum(counts, 1e-6)[:, None] - means_new**2
            for slot, j in enumerate(np.flatnonzero(empty)):
                means_new[j] = frames[order[slot % n]]
                var_new[j] = global_var
                counts[j] = 1.0
        else:
            means_new = (resp.T @ frames) / counts[:, None]
            var_new = (resp.T @ frames**2) / counts[:, None] - means_new**2

        weights = counts / counts.sum()
        weights /= weights.sum()
        variances = np.maximum(var_new, floor)
        model = GmmModel(weights, means_new, variances)

        log_dens = model.log_densities(frames)
        per_frame = logsumexp(log_dens, axis=1)
        new_avg_ll = float(per_frame.mean())
        record(new_avg_ll)
        if new_avg_ll - avg_ll < options.tol * abs(avg_ll):
            avg_ll = new_avg_ll
            break
        avg_ll = new_avg_ll
    return model


def log_likelihood(model: GmmModel, features: np.ndarray) -> float:
    """Average per-frame log-likelihood of the features under the mixture."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise DataError("features must be a (frames, dims) matrix")
    per_frame = logsumexp(model.log_densities(features), axis=1)
    return float(per_frame.mean())


@dataclass(frozen=True)
class CmPair:
    """A countermeasure: bona fide and spoof mixtures over one feature space."""

    bona: GmmModel
    spoof: GmmModel
    frontend_config_hash: str = ""

    def __post_init__(self):
        if self.bona.dims != self.spoof.dims:
            raise DataError("bona and spoof models must share feature dims")

    def swapped(self) -> "CmPair":
        return CmPair(self.spoof, self.bona, self.frontend_config_hash)


def llr_score(cm: CmPair, features: np.ndarray) -> float:
    """Frame-averaged log-likelihood ratio, bona minus spoof."""
    return log_likelihood(cm.bona, features) - log_likelihood(cm.spoof, features)


# ---------------------------------------------------------------------------
# Model files (plain text, exact round-trip at 17 significant digits)
# ---------------------------------------------------------------------------

def _format_row(values: np.ndarray) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def _write_gmm_block(fh, model: GmmModel) -> None:
    fh.write(f"components {model.n_components}\n")
    fh.write(f"dims {model.dims}\n")
    fh.write("weights\n")
    fh.write(_format_row(model.weights) + "\n")
    fh.write("means\n")
    for row in model.means:
        fh.write(_format_row(row) + "\n")
    fh.write("variances\n")
    for row in model.variances:
        fh.write(_format_row(row) + "\n")


def _expect(lines, token: str, path) -> str:
    try:
        line = next(lines)
    except StopIteration:
        raise DataError(f"{path}: truncated model file (expected {token})") from None
    if not line.startswith(token):
        raise DataError(f"{path}: expected {token!r}, found {line.strip()!r}")
    return line.strip()


def _read_gmm_block(lines, path) -> GmmModel:
    k = int(_expect(lines, "components", path).split()[1])
    dims = int(_expect(lines, "dims", path).split()[1])
    _expect(lines, "weights", path)
    weights = np.array([float(v) for v in next(lines).split()])
    _expect(lines, "means", path)
    means = np.array([[float(v) for v in next(lines).split()] for _ in range(k)])
    _expect(lines, "variances", path)
    variances = np.array([[float(v) for v in next(lines).split()] for _ in range(k)])
    if weights.size != k or means.shape != (k, dims) or variances.shape != (k, dims):
        raise DataError(f"{path}: malformed GMM block")
    return GmmModel(weights, means, variances)


def save_cm_pair(path, cm: CmPair) -> None:
    with open(path, "w") as fh:
        fh.write("bandcm-cmpair v1\n")
        fh.write(f"config {cm.frontend_config_hash or '-'}\n")
        fh.write("model bona\n")
        _write_gmm_block(fh, cm.bona)
        fh.write("model spoof\n")
        _write_gmm_block(fh, cm.spoof)


def load_cm_pair(path) -> CmPair:
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
    if next(lines, None) != "bandcm-cmpair v1":
        raise DataError(f"{path}: not a bandcm-cmpair v1 file")
    config_hash = _expect(lines, "config", path).split()[1]
    _expect(lines, "model bona", path)
    bona = _read_gmm_block(lines, path)
    _expect(lines, "model spoof", path)
    spoof = _read_gmm_block(lines, path)
    return CmPair(bona, spoof, "" if config_hash == "-" else config_hash)
