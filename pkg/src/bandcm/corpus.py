"""Protocol files, dataset manifests and synthetic data generators.

Two generators support desk-scale experiments without any external corpus:

* ``synth_corpus`` writes WAV utterances where every spoofing attack is the
  shared noise carrier plus a band-limited artefact (added band noise or a
  spectral notch), so detectability is localised in frequency by
  construction.
* ``synth_scenario`` samples per-countermeasure score vectors from Gaussian
  clusters laid out so that bona fide trials sit high on every axis while
  each attack depresses a different subset of scores.

Everything is deterministic given the spec seed; per-utterance generators
are derived from (seed, split, utterance id).
"""

from dataclasses import dataclass, field
from pathlib import Path
import json
import math

import numpy as np

from .errors import ConfigurationError, DataError
from .frontend import Waveform, load_wav, write_wav
from .metrics import BONAFIDE, NO_ATTACK, SPOOF
from .util import derived_rng

CARRIER_RMS = 0.05

BAND_NOISE = "band-noise"
BAND_NOTCH = "band-notch"


@dataclass(frozen=True)
class Trial:
    speaker_id: str
    utterance_id: str
    attack_id: str
    key: str

    def __post_init__(self):
        if self.key not in (BONAFIDE, SPOOF):
            raise DataError(f"bad key {self.key!r}")
        if (self.key == BONAFIDE) != (self.attack_id == NO_ATTACK):
            raise DataError(
                f"trial {self.utterance_id}: key {self.key!r} inconsistent "
                f"with attack {self.attack_id!r}"
            )


def parse_protocol(path) -> list[Trial]:
    """Read an ASVspoof-style protocol: `speaker utt - attack key` per line."""
    trials = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            speaker, utt, dash, attack, key = parts
            if dash != "-":
                raise DataError(f"{path}:{lineno}: third field must be '-'")
            try:
                trials.append(Trial(speaker, utt, attack, key))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return trials


def write_protocol(path, trials) -> None:
    with open(path, "w") as fh:
        for t in trials:
            fh.write(f"{t.speaker_id} {t.utterance_id} - {t.attack_id} {t.key}\n")


@dataclass(frozen=True)
class ManifestRow:
    utterance_id: str
    path: str
    attack_id: str
    key: str


def write_manifest(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("utterance_id\tpath\tattack_id\tkey\n")
        for row in rows:
            fh.write(f"{row.utterance_id}\t{row.path}\t{row.attack_id}\t{row.key}\n")


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["utterance_id", "path", "attack_id", "key"]:
            raise DataError(f"{path}: unexpected manifest header {header}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns")
            rows.append(ManifestRow(*parts))
    return rows


@dataclass(frozen=True)
class Utterance:
    """A labelled waveform ready for feature extraction."""

    utterance_id: str
    attack_id: str
    key: str
    wave: Waveform


def load_dataset(protocol_path, audio_dir) -> list[Utterance]:
    """Load `<audio_dir>/<utterance_id>.wav` for every protocol trial."""
    audio_dir = Path(audio_dir)
    out = []
    for trial in parse_protocol(protocol_path):
        wav_path = audio_dir / f"{trial.utterance_id}.wav"
        if not wav_path.exists():
            raise DataError(f"missing audio for {trial.utterance_id}: {wav_path}")
        out.append(Utterance(trial.utterance_id, trial.attack_id, trial.key, load_wav(wav_path)))
    return out


# ---------------------------------------------------------------------------
# Synthetic waveform corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackSpec:
    """One synthetic attack: carrier plus a band-limited artefact.

    For band-noise, snr_db is the in-band artefact-to-carrier power ratio
    (10 dB means the artefact sits 10 dB above the carrier's energy inside
    the band). For band-notch, snr_db is the attenuation depth applied to
    the band. snr_db of None or -inf disables the artefact entirely.
    """

    attack_id: str
    count: int
    f_lo: float
    f_hi: float
    kind: str = BAND_NOISE
    snr_db: float | None = 10.0

    def __post_init__(self):
        if self.count <= 0:
            raise ConfigurationError("attack count must be positive")
        if not 0 <= self.f_lo < self.f_hi:
            raise ConfigurationError("need 0 <= f_lo < f_hi")
        if self.kind not in (BAND_NOISE, BAND_NOTCH):
            raise ConfigurationError(f"unknown artefact kind {self.kind!r}")

    @property
    def enabled(self) -> bool:
        return self.snr_db is not None and not math.isinf(self.snr_db)


@dataclass(frozen=True)
class SynthSpec:
    n_bona: int = 24
    attacks: tuple = (AttackSpec("A01", 24, 2000.0, 4000.0),)
    duration_s: float = 1.0
    sample_rate: int = 16000
    seed: int = 0
    splits: tuple = ("train", "eval")

    def __post_init__(self):
        if self.n_bona <= 0:
            raise ConfigurationError("n_bona must be positive")
        if self.duration_s <= 0 or self.sample_rate <= 0:
            raise ConfigurationError("duration and sample rate must be positive")
        for atk in self.attacks:
            if atk.f_hi > self.sample_rate / 2:
                raise ConfigurationError(
                    f"attack {atk.attack_id} band exceeds Nyquist "
                    f"({self.sample_rate / 2} Hz)"
                )
        object.__setattr__(self, "attacks", tuple(self.attacks))
        object.__setattr__(self, "splits", tuple(self.splits))


def _spectral_envelope(freqs: np.ndarray) -> np.ndarray:
    """Fixed low-order speech-like magnitude envelope (band-passed pink)."""
    f = np.maximum(freqs, 1e-6)
    high_pass = f**2 / (f**2 + 120.0**2)
    roll_off = 1.0 / (1.0 + (f / 600.0) ** 2)
    return np.sqrt(high_pass * roll_off)


def _carrier(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spectrum = np.fft.rfft(rng.standard_normal(n)) * _spectral_envelope(freqs)
    x = np.fft.irfft(spectrum, n=n)
    return x * (CARRIER_RMS / np.sqrt(np.mean(x**2)))


def _band_mask(n: int, sample_rate: int, f_lo: float, f_hi: float) -> np.ndarray:
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    return (freqs >= f_lo) & (freqs < f_hi)


def _apply_artefact(carrier: np.ndarray, atk: AttackSpec, sample_rate: int,
                    rng: np.random.Generator) -> np.ndarray:
    if not atk.enabled:
        return carrier
    n = carrier.size
    mask = _band_mask(n, sample_rate, atk.f_lo, atk.f_hi)
    if atk.kind == BAND_NOTCH:
        gain = 10.0 ** (-atk.snr_db / 20.0)
        spectrum = np.fft.rfft(carrier)
        spectrum[mask] *= gain
        return np.fft.irfft(spectrum, n=n)
    carrier_band = np.fft.irfft(np.fft.rfft(carrier) * mask, n=n)
    band_power = np.mean(carrier_band**2)
    noise = np.fft.irfft(np.fft.rfft(rng.standard_normal(n)) * mask, n=n)
    target_power = band_power * 10.0 ** (atk.snr_db / 10.0)
    noise *= np.sqrt(target_power / np.mean(noise**2))
    return carrier + noise


def _finalize(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x))
    if peak > 0.999:
        x = x * (0.999 / peak)
    return x


def synth_corpus(spec: SynthSpec, out_dir) -> dict:
    """Generate WAVs, protocol and manifest for every split of the spec.

    Layout per split: `<out_dir>/<split>/wav/<utt>.wav` plus protocol.txt
    and manifest.tsv. Returns {split: list of ManifestRow}.
    """
    out_dir = Path(out_dir)
    n = int(round(spec.duration_s * spec.sample_rate))
    speakers = [f"S{1 + i:04d}" for i in range(4)]
    manifests = {}
    for split in spec.splits:
        split_dir = out_dir / split
        wav_dir = split_dir / "wav"
        wav_dir.mkdir(parents=True, exist_ok=True)
        trials, rows = [], []

        def emit(utt_id: str, attack_id: str, key: str, samples: np.ndarray) -> None:
            wave_obj = Waveform(_finalize(samples), spec.sample_rate)
            write_wav(wav_dir / f"{utt_id}.wav", wave_obj)
            speaker = speakers[len(trials) % len(speakers)]
            trials.append(Trial(speaker, utt_id, attack_id, key))
            rows.append(ManifestRow(utt_id, f"wav/{utt_id}.wav", attack_id, key))

        for i in range(spec.n_bona):
            utt_id = f"{split}_bona_{i:04d}"
            rng = derived_rng(spec.seed, "corpus", split, utt_id)
            emit(utt_id, NO_ATTACK, BONAFIDE, _carrier(rng, n, spec.sample_rate))
        for atk in spec.attacks:
            for i in range(atk.count):
                utt_id = f"{split}_{atk.attack_id}_{i:04d}"
                rng = derived_rng(spec.seed, "corpus", split, utt_id)
                carrier = _carrier(rng, n, spec.sample_rate)
                emit(utt_id, atk.attack_id, SPOOF,
                     _apply_artefact(carrier, atk, spec.sample_rate, rng))

        write_protocol(split_dir / "protocol.txt", trials)
        write_manifest(split_dir / "manifest.tsv", rows)
        manifests[split] = rows
    return manifests


def synth_spec_from_json(path) -> SynthSpec:
    """Load a SynthSpec from a JSON file."""
    with open(path) as fh:
        raw = json.load(fh)
    try:
        attacks = tuple(
            AttackSpec(
                attack_id=a["attack_id"],
                count=int(a["count"]),
                f_lo=float(a["f_lo"]),
                f_hi=float(a["f_hi"]),
                kind=a.get("kind", BAND_NOISE),
                snr_db=None if a.get("snr_db") is None else float(a["snr_db"]),
            )
            for a in raw["attacks"]
        )
        return SynthSpec(
            n_bona=int(raw["n_bona"]),
            attacks=attacks,
            duration_s=float(raw.get("duration_s", 1.0)),
            sample_rate=int(raw.get("sample_rate", 16000)),
            seed=int(raw.get("seed", 0)),
            splits=tuple(raw.get("splits", ("train", "eval"))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: bad synthesis spec: {exc}") from exc


# ---------------------------------------------------------------------------
# Synthetic score-vector scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterSpec:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ConfigurationError("cluster mean/cov shapes are inconsistent")
        if self.count <= 0:
            raise ConfigurationError("cluster count must be positive")
        if not np.allclose(cov, cov.T):
            raise ConfigurationError("covariance must be symmetric")
        eigvals = np.linalg.eigvalsh(cov)
        if eigvals.min() < -1e-10 * max(1.0, eigvals.max()):
            raise ConfigurationError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class ScenarioSpec:
    bona: ClusterSpec
    attacks: dict = field(default_factory=dict)   # attack_id -> ClusterSpec
    seed: int = 0

    def __post_init__(self):
        dims = {self.bona.mean.size} | {c.mean.size for c in self.attacks.values()}
        if len(dims) != 1:
            raise ConfigurationError("all clusters must share the score dimension")
        if not self.attacks:
            raise ConfigurationError("at least one attack cluster is required")

    @property
    def dims(self) -> int:
        return self.bona.mean.size


def default_scenario_spec(seed: int = 0) -> ScenarioSpec:
    """Two-countermeasure cluster layout where only non-linear fusion works.

    Bona fide trials form one broad cloud that scores high on both
    countermeasures. Each attack is a near-point cluster sitting inside
    that cloud's bulk: A1 low on the first countermeasure, A2 low on the
    second, A3 low on both. Rejecting an attack with any linear score (or
    any fused score built from linear class logits, which can only bound
    the accept region by hyperplanes) forfeits the whole cap of bona fide
    mass beyond the separating line, once per attack. Class-conditional
    density models instead carve a negligible hole around each cluster, so
    the two non-linear fusers are an order of magnitude more accurate here.
    """
    iso = lambda s: (s**2) * np.eye(2)
    centre = 4.5
    offset = 1.4 * 1.4 / np.sqrt(2.0)   # 1.4 bona sigmas from the centre
    lo, hi = centre - offset, centre + offset
    return ScenarioSpec(
        bona=ClusterSpec(np.array([centre, centre]), iso(1.4), 400),
        attacks={
            "A1": ClusterSpec(np.array([lo, hi]), iso(0.03), 200),
            "A2": ClusterSpec(np.array([hi, lo]), iso(0.03), 200),
            "A3": ClusterSpec(np.array([lo, lo]), iso(0.03), 200),
        },
        seed=seed,
    )


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(cov)
    return eigvecs * np.sqrt(np.maximum(eigvals, 0.0))


def synth_scenario(spec: ScenarioSpec, split: str = "train"):
    """Sample a ScoreVectorSet from the scenario clusters (deterministic)."""
    from .fusion import ScoreVectorSet

    ids, attack_ids, keys, vectors = [], [], [], []

    def sample(name: str, attack_id: str, key: str, cluster: ClusterSpec) -> None:
        rng = derived_rng(spec.seed, "scenario", split, name)
        z = rng.standard_normal((cluster.count, cluster.mean.size))
        points = cluster.mean + z @ _psd_factor(cluster.cov).T
        for i, row in enumerate(points):
            ids.append(f"{split}_{name}_{i:05d}")
            attack_ids.append(attack_id)
            keys.append(key)
            vectors.append(row)

    sample("bona", NO_ATTACK, BONAFIDE, spec.bona)
    for name in sorted(spec.attacks):
        sample(name, name, SPOOF, spec.attacks[name])
    return ScoreVectorSet(ids, attack_ids, keys, np.array(vectors))


def scenario_spec_from_json(path) -> ScenarioSpec:
    """Load a ScenarioSpec from a JSON file ('default': true uses the built-in layout)."""
    with open(path) as fh:
        raw = json.load(fh)
    if raw.get("default"):
        return default_scenario_spec(seed=int(raw.get("seed", 0)))
    try:
        def cluster(c):
            return ClusterSpec(np.array(c["mean"], dtype=float),
                               np.array(c["cov"], dtype=float), int(c["count"]))

        return ScenarioSpec(
            bona=cluster(raw["bona"]),
            attacks={name: cluster(c) for name, c in raw["attacks"].items()},
            seed=int(raw.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path}: bad scenario spec: {exc}") from exc
