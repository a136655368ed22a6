"""Score-level fusion of an ensemble of countermeasures.

Each trial carries a vector of per-countermeasure scores; a fuser maps it
to one detection score with the usual polarity (high = bona fide). Four
fusers are provided:

* linear: prior-weighted binary logistic regression, calibrated LLR output;
* multinomial: softmax over {bona fide} + one class per training attack,
  scored as log posterior odds of bona fide vs. the spoof union at a flat
  class prior;
* gmm: one diagonal-covariance mixture per class over z-normed score space,
  scored as a log-likelihood ratio;
* svm-poly: soft-margin SVM with a polynomial kernel trained by sequential
  minimal optimization on z-normed vectors, scored as the signed margin.

Score vectors are standardized (training statistics stored in the model)
before the SVM and GMM fusers; a degree-7 kernel on raw LLR magnitudes
would overflow otherwise.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

from .errors import ConfigurationError, DataError, TrainingError
from .gmm import EmOptions, GmmModel, train_gmm, _read_gmm_block, _write_gmm_block
from .metrics import BONAFIDE, NO_ATTACK, SPOOF, ScoreRow, read_score_file

KIND_LINEAR = "linear"
KIND_MULTINOMIAL = "multinomial"
KIND_GMM = "gmm"
KIND_SVM = "svm-poly"


@dataclass(frozen=True)
class ScoreVectorSet:
    """Aligned per-trial score vectors with trial metadata."""

    utterance_ids: list
    attack_ids: list
    keys: list
    vectors: np.ndarray   # (n_trials, D)

    def __post_init__(self):
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        n = len(self.utterance_ids)
        if vectors.shape[0] != n or len(self.attack_ids) != n or len(self.keys) != n:
            raise DataError("score vector set fields have inconsistent lengths")
        if n == 0:
            raise DataError("empty score vector set")
        if not np.all(np.isfinite(vectors)):
            raise DataError("score vectors must be finite")
        for key in self.keys:
            if key not in (BONAFIDE, SPOOF):
                raise DataError(f"bad key {key!r}")
        object.__setattr__(self, "vectors", vectors)

    @property
    def dims(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_trials(self) -> int:
        return self.vectors.shape[0]

    def bona_mask(self) -> np.ndarray:
        return np.array([k == BONAFIDE for k in self.keys])

    def labels(self) -> np.ndarray:
        """+1 for bona fide, -1 for spoof."""
        return np.where(self.bona_mask(), 1.0, -1.0)

    def attack_set(self) -> list:
        return sorted({a for a, k in zip(self.attack_ids, self.keys) if k == SPOOF})

    def column_rows(self, dim: int) -> list:
        """ScoreRows for one countermeasure column (for score-file output)."""
        return [
            ScoreRow(u, a, k, float(v))
            for u, a, k, v in zip(
                self.utterance_ids, self.attack_ids, self.keys, self.vectors[:, dim]
            )
        ]


def score_vectors_from_files(paths) -> ScoreVectorSet:
    """Assemble a ScoreVectorSet from aligned per-countermeasure score files.

    Files must cover exactly the same utterances with identical attack ids
    and keys; any mismatch is a hard error. Trial order follows the first
    file.
    """
    if not paths:
        raise ConfigurationError("at least one score file is required")
    first = read_score_file(paths[0])
    index = {row.utterance_id: i for i, row in enumerate(first)}
    if len(index) != len(first):
        raise DataError(f"{paths[0]}: duplicate utterance ids")
    vectors = np.empty((len(first), len(paths)))
    vectors[:, 0] = [row.score for row in first]
    for d, path in enumerate(paths[1:], start=1):
        rows = read_score_file(path)
        if len(rows) != len(first):
            raise DataError(
                f"{path}: {len(rows)} trials but {paths[0]} has {len(first)}"
            )
        for row in rows:
            i = index.get(row.utterance_id)
            if i is None:
                raise DataError(f"{path}: utterance {row.utterance_id} missing from {paths[0]}")
            ref = first[i]
            if (row.attack_id, row.key) != (ref.attack_id, ref.key):
                raise DataError(
                    f"{path}: trial {row.utterance_id} labelled "
                    f"({row.attack_id}, {row.key}) vs ({ref.attack_id}, {ref.key})"
                )
            vectors[i, d] = row.score
    return ScoreVectorSet(
        [r.utterance_id for r in first],
        [r.attack_id for r in first],
        [r.key for r in first],
        vectors,
    )


def fused_rows(svs: ScoreVectorSet, scores: np.ndarray) -> list:
    return [
        ScoreRow(u, a, k, float(s))
        for u, a, k, s in zip(svs.utterance_ids, svs.attack_ids, svs.keys, scores)
    ]


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, vectors: np.ndarray) -> "Standardizer":
        std = np.std(vectors, axis=0)
        return cls(np.mean(vectors, axis=0), np.where(std > 0, std, 1.0))

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        return (vectors - self.mean) / self.std


# ---------------------------------------------------------------------------
# Linear logistic fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearFusion:
    kind = KIND_LINEAR
    weights: np.ndarray
    bias: float
    prior: float = 0.5

    @property
    def dims(self) -> int:
        return self.weights.size


@dataclass
class LogisticOptions:
    prior: float = 0.5
    ridge: float = 1e-6
    max_iters: int = 200
    grad_tol: float = 1e-9


def _check_two_classes(svs: ScoreVectorSet) -> None:
    mask = svs.bona_mask()
    if mask.all() or not mask.any():
        raise TrainingError("fusion training needs both bona fide and spoof trials")


def train_linear_fusion(train: ScoreVectorSet, options: LogisticOptions | None = None) -> LinearFusion:
    """Prior-weighted binary logistic regression by Newton iterations.

    The fused score w.x + b is a calibrated LLR: the training objective is
    the cross-entropy of sigmoid(score + logit(prior)) with per-class
    weights prior/N_bona and (1-prior)/N_spoof.
    """
    options = options or LogisticOptions()
    _check_two_classes(train)
    x = np.hstack([train.vectors, np.ones((train.n_trials, 1))])
    y = train.labels()
    nb = int((y > 0).sum())
    ns = y.size - nb
    case_weight = np.where(y > 0, options.prior / nb, (1.0 - options.prior) / ns)
    offset = np.log(options.prior / (1.0 - options.prior))

    theta = np.zeros(x.shape[1])
    reg = np.full(x.shape[1], options.ridge)
    reg[-1] = 0.0
    for _ in range(options.max_iters):
        margin = y * (x @ theta + offset)
        p = expit(margin)
        grad = -x.T @ (case_weight * (1.0 - p) * y) + reg * theta
        if np.linalg.norm(grad) < options.grad_tol:
            break
        curv = case_weight * p * (1.0 - p)
        hess = (x * curv[:, None]).T @ x + np.diag(np.maximum(reg, 1e-12))
        step = np.linalg.solve(hess, grad)
        theta = theta - step
    return LinearFusion(theta[:-1].copy(), float(theta[-1]), options.prior)


# ---------------------------------------------------------------------------
# Multinomial logistic fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultinomialFusion:
    kind = KIND_MULTINOMIAL
    classes: list                 # class 0 is bona fide
    weights: np.ndarray           # (C, D)
    biases: np.ndarray            # (C,)
    log_class_freq: np.ndarray    # (C,) training class frequencies

    @property
    def dims(self) -> int:
        return self.weights.shape[1]


def train_multinomial_fusion(train: ScoreVectorSet, options: LogisticOptions | None = None) -> MultinomialFusion:
    """Softmax classifier over {bona fide} + one class per training attack."""
    options = options or LogisticOptions()
    _check_two_classes(train)
    classes = [BONAFIDE] + train.attack_set()
    class_of = {name: i for i, name in enumerate(classes)}
    targets = np.array([
        class_of[BONAFIDE if k == BONAFIDE else a]
        for a, k in zip(train.attack_ids, train.keys)
    ])
    counts = np.bincount(targets, minlength=len(classes))
    if np.any(counts == 0):
        missing = [c for c, n in zip(classes, counts) if n == 0]
        raise TrainingError(f"empty training class(es): {missing}")

    x = np.hstack([train.vectors, np.ones((train.n_trials, 1))])
    n, d1 = x.shape
    c = len(classes)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), targets] = 1.0

    def objective(flat):
        w = flat.reshape(c, d1)
        logits = x @ w.T
        log_p = logits - logsumexp(logits, axis=1, keepdims=True)
        nll = -np.sum(log_p[np.arange(n), targets]) / n
        nll += 0.5 * options.ridge * np.sum(w[:, :-1] ** 2)
        p = np.exp(log_p)
        grad = ((p - onehot).T @ x) / n
        grad[:, :-1] += options.ridge * w[:, :-1]
        return nll, grad.ravel()

    result = minimize(
        objective,
        np.zeros(c * d1),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 1000, "ftol": 1e-14, "gtol": 1e-10},
    )
    w = result.x.reshape(c, d1)
    return MultinomialFusion(
        classes, w[:, :-1].copy(), w[:, -1].copy(), np.log(counts / n)
    )


def _multinomial_scores(model: MultinomialFusion, vectors: np.ndarray) -> np.ndarray:
    logits = vectors @ model.weights.T + model.biases
    # flat class prior: divide posteriors by training class frequencies
    adjusted = logits - model.log_class_freq
    return adjusted[:, 0] - logsumexp(adjusted[:, 1:], axis=1)


# ---------------------------------------------------------------------------
# GMM fusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GmmFusion:
    kind = KIND_GMM
    bona: GmmModel
    spoof: GmmModel
    standardizer: Standardizer

    @property
    def dims(self) -> int:
        return self.bona.dims


def train_gmm_fusion(train: ScoreVectorSet, k: int = 64,
                     em_options: EmOptions | None = None) -> GmmFusion:
    """Class-conditional mixtures over z-normed score vectors."""
    _check_two_classes(train)
    em_options = em_options or EmOptions()
    standardizer = Standardizer.fit(train.vectors)
    z = standardizer.apply(train.vectors)
    mask = train.bona_mask()
    bona_opts = EmOptions(**{**em_options.__dict__, "seed": em_options.seed * 2 + 1})
    spoof_opts = EmOptions(**{**em_options.__dict__, "seed": em_options.seed * 2 + 2})
    bona = train_gmm(z[mask], k, bona_opts)
    spoof = train_gmm(z[~mask], k, spoof_opts)
    return GmmFusion(bona, spoof, standardizer)


def _gmm_scores(model: GmmFusion, vectors: np.ndarray) -> np.ndarray:
    z = model.standardizer.apply(vectors)
    ll_bona = logsumexp(model.bona.log_densities(z), axis=1)
    ll_spoof = logsumexp(model.spoof.log_densities(z), axis=1)
    return ll_bona - ll_spoof


# ---------------------------------------------------------------------------
# Polynomial-kernel SVM fusion (SMO)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SvmFusion:
    kind = KIND_SVM
    support_vectors: np.ndarray   # (n_sv, D), standardized space
    dual_coef: np.ndarray         # (n_sv,), alpha_i * y_i
    bias: float
    degree: int
    gamma: float
    coef0: float
    c: float
    standardizer: Standardizer

    @property
    def dims(self) -> int:
        return self.support_vectors.shape[1]


@dataclass
class SvmOptions:
    degree: int = 7
    c: float = 1.0
    gamma: float | None = None    # None means 1 / D
    coef0: float = 1.0
    tol: float = 1e-3
    max_iters: int = 1_000_000


@dataclass
class SvmDiagnostics:
    """Dual solution captured at convergence, for optimality checks."""

    alpha: np.ndarray | None = None
    labels: np.ndarray | None = None
    margins: np.ndarray | None = None   # y_i * f(x_i) over the training set

    def kkt_residuals(self, c: float) -> np.ndarray:
        """Per-trial KKT violation: alpha=0 wants y*f >= 1, alpha=C wants
        y*f <= 1, interior support vectors want y*f = 1."""
        residuals = np.zeros_like(self.alpha)
        at_zero = self.alpha <= 1e-12
        at_c = self.alpha >= c - 1e-12
        middle = ~(at_zero | at_c)
        residuals[at_zero] = np.maximum(0.0, 1.0 - self.margins[at_zero])
        residuals[at_c] = np.maximum(0.0, self.margins[at_c] - 1.0)
        residuals[middle] = np.abs(self.margins[middle] - 1.0)
        return residuals


def _poly_kernel(a: np.ndarray, b: np.ndarray, gamma: float, coef0: float, degree: int) -> np.ndarray:
    return (gamma * (a @ b.T) + coef0) ** degree


class _Smo:
    """Sequential minimal optimization with maximal-violating-pair selection.

    Maintains u_i = sum_j alpha_j y_j K_ij and the residuals r_i = y_i - u_i.
    The pair picked each iteration maximizes the KKT gap m - M, where
    m = max r over indices free to increase f and M = min r over indices
    free to decrease it; the solver stops once the gap drops below tol,
    which bounds every margin's KKT violation by tol/2 at the final bias
    b = (m + M) / 2.
    """

    def __init__(self, kernel: np.ndarray, y: np.ndarray, c: float, tol: float):
        self.k = kernel
        self.y = y.astype(float)
        self.c = c
        self.tol = tol
        self.n = y.size
        self.alpha = np.zeros(self.n)
        self.u = np.zeros(self.n)
        self.b = 0.0

    def _bounds(self, i1: int, i2: int) -> tuple[float, float]:
        a1, a2 = self.alpha[i1], self.alpha[i2]
        if self.y[i1] * self.y[i2] > 0:
            return max(0.0, a1 + a2 - self.c), min(self.c, a1 + a2)
        return max(0.0, a2 - a1), min(self.c, self.c + a2 - a1)

    def take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        low, high = self._bounds(i1, i2)
        if low >= high:
            return False
        a1_old, a2_old = self.alpha[i1], self.alpha[i2]
        y1, y2 = self.y[i1], self.y[i2]
        s = y1 * y2
        e1, e2 = self.u[i1] - y1, self.u[i2] - y2
        k11, k12, k22 = self.k[i1, i1], self.k[i1, i2], self.k[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0:
            a2 = min(max(a2_old + y2 * (e1 - e2) / eta, low), high)
        else:
            # flat direction: compare the dual objective at both clip ends
            f1 = y1 * e1 - a1_old * k11 - s * a2_old * k12
            f2 = y2 * e2 - s * a1_old * k12 - a2_old * k22
            l1 = a1_old + s * (a2_old - low)
            h1 = a1_old + s * (a2_old - high)
            obj_low = (l1 * f1 + low * f2 + 0.5 * l1**2 * k11
                       + 0.5 * low**2 * k22 + s * low * l1 * k12)
            obj_high = (h1 * f1 + high * f2 + 0.5 * h1**2 * k11
                        + 0.5 * high**2 * k22 + s * high * h1 * k12)
            if obj_low < obj_high - 1e-12:
                a2 = low
            elif obj_low > obj_high + 1e-12:
                a2 = high
            else:
                return False
        if a2 == a2_old:
            return False
        a1 = a1_old + s * (a2_old - a2)
        # snap round-off back onto the box
        if a1 < 1e-12:
            a1 = 0.0
        elif a1 > self.c - 1e-12:
            a1 = self.c
        self.alpha[i1], self.alpha[i2] = a1, a2
        self.u += y1 * (a1 - a1_old) * self.k[i1] + y2 * (a2 - a2_old) * self.k[i2]
        return True

    def _gap(self):
        r = self.y - self.u
        up = ((self.alpha < self.c - 1e-12) & (self.y > 0)) | (
            (self.alpha > 1e-12) & (self.y < 0))
        down = ((self.alpha < self.c - 1e-12) & (self.y < 0)) | (
            (self.alpha > 1e-12) & (self.y > 0))
        if not up.any() or not down.any():
            return 0.0, 0.0, -1, -1
        up_idx = np.flatnonzero(up)
        down_idx = np.flatnonzero(down)
        i = up_idx[np.argmax(r[up_idx])]
        j = down_idx[np.argmin(r[down_idx])]
        return float(r[i]), float(r[j]), int(i), int(j)

    def solve(self, max_iters: int) -> None:
        for _ in range(max_iters):
            m, mm, i, j = self._gap()
            if i < 0 or m - mm <= self.tol:
                self.b = 0.5 * (m + mm) if i >= 0 else 0.0
                return
            if not self.take_step(i, j):
                # best pair is blocked; try the remaining descent partners
                r = self.y - self.u
                down = ((self.alpha < self.c - 1e-12) & (self.y < 0)) | (
                    (self.alpha > 1e-12) & (self.y > 0))
                moved = False
                for j2 in np.flatnonzero(down)[np.argsort(r[np.flatnonzero(down)])]:
                    if int(j2) != j and self.take_step(i, int(j2)):
                        moved = True
                        break
                if not moved:
                    raise TrainingError(
                        "SMO stalled with a residual KKT gap of "
                        f"{m - mm:.3e} (tol {self.tol:.3e})"
                    )
        raise TrainingError("SMO did not converge within the iteration budget")


def train_svm_poly(
    train: ScoreVectorSet,
    options: SvmOptions | None = None,
    diagnostics: SvmDiagnostics | None = None,
) -> SvmFusion:
    """Soft-margin SVM with kernel (gamma x.y + coef0)^degree, trained by SMO."""
    options = options or SvmOptions()
    _check_two_classes(train)
    if options.degree < 1 or options.c <= 0:
        raise ConfigurationError("SVM needs degree >= 1 and C > 0")
    standardizer = Standardizer.fit(train.vectors)
    x = standardizer.apply(train.vectors)
    y = train.labels()
    gamma = options.gamma if options.gamma is not None else 1.0 / train.dims
    kernel = _poly_kernel(x, x, gamma, options.coef0, options.degree)
    smo = _Smo(kernel, y, options.c, options.tol)
    smo.solve(options.max_iters)

    if diagnostics is not None:
        diagnostics.alpha = smo.alpha.copy()
        diagnostics.labels = y.copy()
        diagnostics.margins = y * (smo.u + smo.b)

    sv = smo.alpha > 1e-12
    return SvmFusion(
        support_vectors=x[sv].copy(),
        dual_coef=(smo.alpha * y)[sv].copy(),
        bias=float(smo.b),
        degree=options.degree,
        gamma=gamma,
        coef0=options.coef0,
        c=options.c,
        standardizer=standardizer,
    )


def _svm_scores(model: SvmFusion, vectors: np.ndarray) -> np.ndarray:
    z = model.standardizer.apply(vectors)
    kernel = _poly_kernel(z, model.support_vectors, model.gamma, model.coef0, model.degree)
    return kernel @ model.dual_coef + model.bias


# ---------------------------------------------------------------------------
# Applying and persisting fusion models
# ---------------------------------------------------------------------------

FusionModel = LinearFusion | MultinomialFusion | GmmFusion | SvmFusion


def fuse(model: FusionModel, scores: ScoreVectorSet) -> np.ndarray:
    """Apply a trained fuser; one output score per trial, high = bona fide."""
    if scores.dims != model.dims:
        raise DataError(
            f"score vectors have {scores.dims} dims but the model expects {model.dims}"
        )
    if isinstance(model, LinearFusion):
        return scores.vectors @ model.weights + model.bias
    if isinstance(model, MultinomialFusion):
        return _multinomial_scores(model, scores.vectors)
    if isinstance(model, GmmFusion):
        return _gmm_scores(model, scores.vectors)
    if isinstance(model, SvmFusion):
        return _svm_scores(model, scores.vectors)
    raise ConfigurationError(f"unknown fusion model type {type(model)!r}")


def _row(values) -> str:
    return " ".join(f"{v:.17g}" for v in np.atleast_1d(values))


def save_fusion_model(path, model: FusionModel) -> None:
    with open(path, "w") as fh:
        fh.write("bandcm-fusion v1\n")
        fh.write(f"kind {model.kind}\n")
        if isinstance(model, LinearFusion):
            fh.write(f"dims {model.dims}\n")
            fh.write(f"prior {model.prior:.17g}\n")
            fh.write("weights\n" + _row(model.weights) + "\n")
            fh.write(f"bias {model.bias:.17g}\n")
        elif isinstance(model, MultinomialFusion):
            fh.write(f"dims {model.dims}\n")
            fh.write("classes " + " ".join(model.classes) + "\n")
            fh.write("weights\n")
            for row in model.weights:
                fh.write(_row(row) + "\n")
            fh.write("biases\n" + _row(model.biases) + "\n")
            fh.write("log_class_freq\n" + _row(model.log_class_freq) + "\n")
        elif isinstance(model, GmmFusion):
            fh.write(f"dims {model.dims}\n")
            fh.write("znorm_mean\n" + _row(model.standardizer.mean) + "\n")
            fh.write("znorm_std\n" + _row(model.standardizer.std) + "\n")
            fh.write("model bona\n")
            _write_gmm_block(fh, model.bona)
            fh.write("model spoof\n")
            _write_gmm_block(fh, model.spoof)
        elif isinstance(model, SvmFusion):
            fh.write(f"dims {model.dims}\n")
            fh.write(
                f"params degree {model.degree} gamma {model.gamma:.17g} "
                f"coef0 {model.coef0:.17g} c {model.c:.17g} bias {model.bias:.17g}\n"
            )
            fh.write("znorm_mean\n" + _row(model.standardizer.mean) + "\n")
            fh.write("znorm_std\n" + _row(model.standardizer.std) + "\n")
            fh.write(f"support_vectors {model.support_vectors.shape[0]}\n")
            for coef, row in zip(model.dual_coef, model.support_vectors):
                fh.write(f"{coef:.17g} " + _row(row) + "\n")
        else:
            raise ConfigurationError(f"cannot save fusion model {type(model)!r}")


def _floats(line: str) -> np.ndarray:
    return np.array([float(v) for v in line.split()])


def load_fusion_model(path) -> FusionModel:
    with open(path) as fh:
        lines = iter(fh.read().splitlines())
    if next(lines, None) != "bandcm-fusion v1":
        raise DataError(f"{path}: not a bandcm-fusion v1 file")
    kind = next(lines).split()[1]
    dims_line = next(lines)
    if not dims_line.startswith("dims "):
        raise DataError(f"{path}: expected dims line")
    dims = int(dims_line.split()[1])
    if kind == KIND_LINEAR:
        prior = float(next(lines).split()[1])
        next(lines)
        weights = _floats(next(lines))
        bias = float(next(lines).split()[1])
        return LinearFusion(weights, bias, prior)
    if kind == KIND_MULTINOMIAL:
        classes = next(lines).split()[1:]
        next(lines)
        weights = np.array([_floats(next(lines)) for _ in classes])
        next(lines)
        biases = _floats(next(lines))
        next(lines)
        log_freq = _floats(next(lines))
        return MultinomialFusion(classes, weights, biases, log_freq)
    if kind == KIND_GMM:
        next(lines)
        mean = _floats(next(lines))
        next(lines)
        std = _floats(next(lines))
        if next(lines) != "model bona":
            raise DataError(f"{path}: expected bona model block")
        bona = _read_gmm_block(lines, path)
        if next(lines) != "model spoof":
            raise DataError(f"{path}: expected spoof model block")
        spoof = _read_gmm_block(lines, path)
        return GmmFusion(bona, spoof, Standardizer(mean, std))
    if kind == KIND_SVM:
        params = next(lines).split()
        degree, gamma = int(params[2]), float(params[4])
        coef0, c, bias = float(params[6]), float(params[8]), float(params[10])
        next(lines)
        mean = _floats(next(lines))
        next(lines)
        std = _floats(next(lines))
        n_sv = int(next(lines).split()[1])
        coefs = np.empty(n_sv)
        vectors = np.empty((n_sv, dims))
        for i in range(n_sv):
            values = _floats(next(lines))
            coefs[i] = values[0]
            vectors[i] = values[1:]
        return SvmFusion(vectors, coefs, bias, degree, gamma, coef0, c,
                         Standardizer(mean, std))
    raise DataError(f"{path}: unknown fusion kind {kind!r}")
