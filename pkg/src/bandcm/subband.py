"""Sub-band selection: t-DCF heat-maps over band grids and centre of mass.

For every valid (cut-in, cut-off) cell of a band grid, a countermeasure is
trained on features restricted to that band and its min t-DCF on the held
out trials of one attack (pooled with bona fide trials) becomes the cell
value. Cells act as particles with mass 1 / min t-DCF; the centre of mass
of the heat-map picks the attack-specific band. Zero-cost cells would have
infinite mass, so cell values are clamped below by epsilon (default 1e-3,
i.e. a mass cap of 1000) before inversion.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Utterance
from .errors import BandcmError, ConfigurationError, DataError
from .frontend import FrontendConfig, cepstra_from_power, power_spectrogram, snap_to_bin
from .gmm import CmPair, EmOptions, llr_score, train_gmm
from .metrics import (
    BONAFIDE,
    LabeledScores,
    SPOOF,
    TdcfCosts,
    bhattacharyya,
    eer,
    fit_score_gaussians,
    min_tdcf,
)
from .util import derive_seed

DEFAULT_EPSILON = 1e-3


@dataclass(frozen=True)
class BandGrid:
    """Candidate cut-in/cut-off frequencies and the minimum band width."""

    cut_in: np.ndarray
    cut_off: np.ndarray
    min_width: float

    def __post_init__(self):
        cut_in = np.asarray(self.cut_in, dtype=float)
        cut_off = np.asarray(self.cut_off, dtype=float)
        if cut_in.size == 0 or cut_off.size == 0:
            raise ConfigurationError("band grid needs candidate frequencies")
        if np.any(np.diff(cut_in) <= 0) or np.any(np.diff(cut_off) <= 0):
            raise ConfigurationError("grid candidates must be strictly ascending")
        if self.min_width <= 0:
            raise ConfigurationError("minimum band width must be positive")
        object.__setattr__(self, "cut_in", cut_in)
        object.__setattr__(self, "cut_off", cut_off)

    def valid_cells(self) -> list:
        """Upper-triangular cells: (f_min, f_max) with f_max - f_min >= min_width."""
        return [
            (float(lo), float(hi))
            for lo in self.cut_in
            for hi in self.cut_off
            if hi - lo >= self.min_width
        ]

    @classmethod
    def linear(cls, f_max: float, n_candidates: int = 21, min_width: float = 800.0) -> "BandGrid":
        candidates = np.linspace(0.0, f_max, n_candidates)
        return cls(candidates, candidates, min_width)


@dataclass(frozen=True)
class HeatMap:
    """min t-DCF per valid grid cell for one attack; failed cells kept apart."""

    grid: BandGrid
    attack_id: str
    values: dict          # (f_min, f_max) -> min t-DCF
    failures: dict = field(default_factory=dict)   # (f_min, f_max) -> reason

    def __post_init__(self):
        for cell, value in self.values.items():
            if not (np.isfinite(value) and value >= 0):
                raise DataError(f"cell {cell}: bad heat-map value {value!r}")

    def min_cell(self) -> tuple:
        """(f_min, f_max) of the lowest-cost cell (first in grid order on ties)."""
        if not self.values:
            raise DataError("heat-map has no populated cells")
        cells = sorted(self.values)
        return min(cells, key=lambda c: (self.values[c], cells.index(c)))


@dataclass(frozen=True)
class ComResult:
    f_min_com: float
    f_max_com: float
    total_mass: float
    epsilon: float


def center_of_mass(hm: HeatMap, epsilon: float = DEFAULT_EPSILON,
                   bin_hz: float | None = None) -> ComResult:
    """Mass-weighted mean cell position with mass 1 / max(t-DCF, epsilon).

    With bin_hz given, the resulting band edges snap to the nearest FFT bin
    centres.
    """
    if not hm.values:
        raise DataError("cannot take the centre of mass of an empty heat-map")
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be positive")
    cells = sorted(hm.values)
    coords = np.array(cells)
    masses = np.array([1.0 / max(hm.values[c], epsilon) for c in cells])
    total = masses.sum()
    f_min_com, f_max_com = (masses @ coords) / total
    if bin_hz is not None:
        f_min_com = round(f_min_com / bin_hz) * bin_hz
        f_max_com = round(f_max_com / bin_hz) * bin_hz
    return ComResult(float(f_min_com), float(f_max_com), float(total), float(epsilon))


# ---------------------------------------------------------------------------
# Countermeasure training helpers shared by the heat-map and the sweep
# ---------------------------------------------------------------------------

def _check_dataset(utterances, attack_id: str | None, label: str) -> None:
    keys = {u.key for u in utterances}
    if BONAFIDE not in keys:
        raise DataError(f"{label} set has no bona fide trials")
    if attack_id is None:
        if SPOOF not in keys:
            raise DataError(f"{label} set has no spoof trials")
    elif not any(u.attack_id == attack_id for u in utterances):
        raise DataError(f"{label} set has no trials of attack {attack_id}")


def _power_cache(utterances, cfg: FrontendConfig) -> dict:
    rates = {u.wave.sample_rate for u in utterances}
    if len(rates) != 1:
        raise DataError(f"mixed sample rates in dataset: {sorted(rates)}")
    return {u.utterance_id: power_spectrogram(u.wave, cfg) for u in utterances}


def train_cm(
    bona_features,
    spoof_features,
    k: int,
    em_options: EmOptions,
    seed: int,
    config_hash: str = "",
) -> CmPair:
    """Train the bona fide / spoof mixture pair with derived per-model seeds."""
    bona_opts = replace_seed(em_options, derive_seed(seed, "bona"))
    spoof_opts = replace_seed(em_options, derive_seed(seed, "spoof"))
    return CmPair(
        train_gmm(bona_features, k, bona_opts),
        train_gmm(spoof_features, k, spoof_opts),
        config_hash,
    )


def replace_seed(options: EmOptions, seed: int) -> EmOptions:
    return EmOptions(
        max_iters=options.max_iters,
        tol=options.tol,
        variance_floor_factor=options.variance_floor_factor,
        kmeans_iters=options.kmeans_iters,
        seed=seed,
    )


def build_heatmap(
    grid: BandGrid,
    attack_id: str,
    train_set,
    eval_set,
    frontend_template: FrontendConfig,
    k: int = 16,
    em_options: EmOptions | None = None,
    costs: TdcfCosts = TdcfCosts(),
    seed: int = 0,
    jobs: int = 1,
) -> HeatMap:
    """One countermeasure per valid grid cell, evaluated against one attack.

    Framing and FFT work is shared across cells (only the filterbank stage
    depends on the band). Per-cell filter counts scale with bandwidth from
    the template's full-band count, with a floor of 10 filters. Cells whose
    training fails are recorded under `failures` rather than silently set
    to zero. Cells are independent; with jobs > 1 they are evaluated
    concurrently and assembled in grid order regardless of completion order.
    """
    em_options = em_options or EmOptions()
    _check_dataset(train_set, attack_id, "training")
    _check_dataset(eval_set, attack_id, "evaluation")
    train_utts = [u for u in train_set if u.key == BONAFIDE or u.attack_id == attack_id]
    eval_utts = [u for u in eval_set if u.key == BONAFIDE or u.attack_id == attack_id]
    sample_rate = train_utts[0].wave.sample_rate

    train_power = _power_cache(train_utts, frontend_template)
    eval_power = _power_cache(eval_utts, frontend_template)

    def run_cell(cell):
        f_lo, f_hi = cell
        cfg = frontend_template.with_band(f_lo, f_hi)
        feats = {
            uid: cepstra_from_power(spec, cfg, sample_rate)
            for uid, spec in train_power.items()
        }
        bona = [feats[u.utterance_id] for u in train_utts if u.key == BONAFIDE]
        spoof = [feats[u.utterance_id] for u in train_utts if u.key == SPOOF]
        cell_seed = derive_seed(seed, "heatmap", attack_id, f"{f_lo:.6g}", f"{f_hi:.6g}")
        cm = train_cm(bona, spoof, k, em_options, cell_seed, cfg.config_hash())
        bona_scores, spoof_scores = [], []
        for u in eval_utts:
            score = llr_score(cm, cepstra_from_power(eval_power[u.utterance_id], cfg, sample_rate))
            (bona_scores if u.key == BONAFIDE else spoof_scores).append(score)
        return min_tdcf(LabeledScores(np.array(bona_scores), np.array(spoof_scores)), costs)

    cells = grid.valid_cells()
    values, failures = {}, {}
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_guarded(run_cell), cells))
    else:
        outcomes = [_guarded(run_cell)(cell) for cell in cells]
    for cell, (ok, payload) in zip(cells, outcomes):
        if ok:
            values[cell] = payload
        else:
            failures[cell] = payload
    return HeatMap(grid, attack_id, values, failures)


def _guarded(fn):
    def wrapper(cell):
        try:
            return True, fn(cell)
        except BandcmError as exc:
            return False, str(exc)

    return wrapper


@dataclass(frozen=True)
class SweepRow:
    n_filters: int
    min_tdcf: float
    eer: float
    bhattacharyya: float


def resolution_sweep(
    filter_counts,
    train_set,
    dev_set,
    frontend_template: FrontendConfig,
    k: int = 16,
    em_options: EmOptions | None = None,
    costs: TdcfCosts = TdcfCosts(),
    seed: int = 0,
) -> list:
    """Full-band countermeasure quality against the number of filters.

    For each N a CmPair is retrained, then min t-DCF, EER and the
    Bhattacharyya distance between the Gaussian-summarised score
    distributions are computed on the dev set.
    """
    em_options = em_options or EmOptions()
    _check_dataset(train_set, None, "training")
    _check_dataset(dev_set, None, "dev")
    sample_rate = train_set[0].wave.sample_rate
    train_power = _power_cache(train_set, frontend_template)
    dev_power = _power_cache(dev_set, frontend_template)

    rows = []
    for n in filter_counts:
        cfg = replace(frontend_template, n_filters=int(n),
                      n_ceps=min(frontend_template.n_ceps, int(n)))
        feats = {
            uid: cepstra_from_power(spec, cfg, sample_rate)
            for uid, spec in train_power.items()
        }
        bona = [feats[u.utterance_id] for u in train_set if u.key == BONAFIDE]
        spoof = [feats[u.utterance_id] for u in train_set if u.key == SPOOF]
        cm = train_cm(bona, spoof, k, em_options,
                      derive_seed(seed, "sweep", str(int(n))), cfg.config_hash())
        bona_scores, spoof_scores = [], []
        for u in dev_set:
            score = llr_score(cm, cepstra_from_power(dev_power[u.utterance_id], cfg, sample_rate))
            (bona_scores if u.key == BONAFIDE else spoof_scores).append(score)
        scores = LabeledScores(np.array(bona_scores), np.array(spoof_scores))
        mu_b, sigma_b, mu_s, sigma_s = fit_score_gaussians(scores)
        rows.append(SweepRow(
            n_filters=int(n),
            min_tdcf=min_tdcf(scores, costs),
            eer=eer(scores),
            bhattacharyya=bhattacharyya(mu_b, sigma_b, mu_s, sigma_s),
        ))
    return rows


def train_band_cm(
    train_set,
    attack_id: str | None,
    band: tuple,
    frontend_template: FrontendConfig,
    k: int = 16,
    em_options: EmOptions | None = None,
    seed: int = 0,
) -> tuple:
    """Train a countermeasure on one band; returns (CmPair, FrontendConfig).

    With attack_id given, only that attack's trials join the spoof side.
    """
    em_options = em_options or EmOptions()
    cfg = frontend_template.with_band(*band)
    utts = [u for u in train_set
            if u.key == BONAFIDE or attack_id is None or u.attack_id == attack_id]
    _check_dataset(utts, attack_id, "training")
    sample_rate = utts[0].wave.sample_rate
    power = _power_cache(utts, frontend_template)
    feats = {uid: cepstra_from_power(spec, cfg, sample_rate) for uid, spec in power.items()}
    bona = [feats[u.utterance_id] for u in utts if u.key == BONAFIDE]
    spoof = [feats[u.utterance_id] for u in utts if u.key == SPOOF]
    cm = train_cm(bona, spoof, k, em_options,
                  derive_seed(seed, "band", f"{band[0]:.6g}", f"{band[1]:.6g}"),
                  cfg.config_hash())
    return cm, cfg


def score_set(cm: CmPair, cfg: FrontendConfig, utterances) -> LabeledScores:
    """LLR-score a dataset with one countermeasure, pooled into LabeledScores."""
    bona_scores, spoof_scores = [], []
    for u in utterances:
        feats = cepstra_from_power(power_spectrogram(u.wave, cfg), cfg, u.wave.sample_rate)
        score = llr_score(cm, feats)
        (bona_scores if u.key == BONAFIDE else spoof_scores).append(score)
    return LabeledScores(np.array(bona_scores), np.array(spoof_scores))


# ---------------------------------------------------------------------------
# Heat-map and CoM report files
# ---------------------------------------------------------------------------

def save_heatmap_tsv(path, hm: HeatMap, extra_comments=()) -> None:
    """TSV with comment metadata; missing (failed) cells are omitted."""
    with open(path, "w") as fh:
        fh.write("# bandcm-heatmap v1\n")
        fh.write(f"# attack {hm.attack_id}\n")
        fh.write("# cut_in " + ",".join(f"{v:.6g}" for v in hm.grid.cut_in) + "\n")
        fh.write("# cut_off " + ",".join(f"{v:.6g}" for v in hm.grid.cut_off) + "\n")
        fh.write(f"# min_width {hm.grid.min_width:.6g}\n")
        for comment in extra_comments:
            fh.write(f"# {comment}\n")
        fh.write("f_min\tf_max\tmin_tdcf\n")
        for cell in sorted(hm.values):
            fh.write(f"{cell[0]:.6g}\t{cell[1]:.6g}\t{hm.values[cell]:.6f}\n")


def load_heatmap_tsv(path) -> HeatMap:
    attack_id = "?"
    cut_in = cut_off = None
    min_width = None
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                fields = line[1:].split()
                if fields[:1] == ["attack"]:
                    attack_id = fields[1]
                elif fields[:1] == ["cut_in"]:
                    cut_in = np.array([float(v) for v in fields[1].split(",")])
                elif fields[:1] == ["cut_off"]:
                    cut_off = np.array([float(v) for v in fields[1].split(",")])
                elif fields[:1] == ["min_width"]:
                    min_width = float(fields[1])
                continue
            if line.startswith("f_min"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns")
            values[(float(parts[0]), float(parts[1]))] = float(parts[2])
    if not values:
        raise DataError(f"{path}: no heat-map cells found")
    if cut_in is None:
        cut_in = np.unique([c[0] for c in values])
    if cut_off is None:
        cut_off = np.unique([c[1] for c in values])
    if min_width is None:
        min_width = min(hi - lo for lo, hi in values)
    grid = BandGrid(cut_in, cut_off, min_width)
    return HeatMap(grid, attack_id, values)


def save_com_report(path, com: ComResult, extra_comments=()) -> None:
    with open(path, "w") as fh:
        for comment in extra_comments:
            fh.write(f"# {comment}\n")
        fh.write(f"f_min_com {com.f_min_com:.17g}\n")
        fh.write(f"f_max_com {com.f_max_com:.17g}\n")
        fh.write(f"epsilon {com.epsilon:.17g}\n")
        fh.write(f"M {com.total_mass:.17g}\n")


def load_com_report(path) -> ComResult:
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, value = line.split()
            entries[key] = float(value)
    try:
        return ComResult(entries["f_min_com"], entries["f_max_com"],
                         entries["M"], entries["epsilon"])
    except KeyError as exc:
        raise DataError(f"{path}: missing CoM report field {exc}") from None
