"""Command-line orchestration of the full experiment pipeline.

Subcommands: synth, scenario, extract, train, score, sweep, heatmap, com,
fuse-train, fuse-apply, evaluate. Commands are idempotent given the same
configuration and seed; outputs are tagged with the resolved config hash
and the resolved configuration itself is written next to the outputs.

Exit codes: 0 on success, 1 for usage or configuration problems, 2 when a
computation or data error occurs.
"""

import argparse
import json
import sys
from pathlib import Path

from . import corpus, fusion, metrics, subband
from .config import ExperimentConfig
from .errors import BandcmError, ConfigurationError, DataError
from .frontend import extract_lfcc, load_features, load_wav, save_features
from .gmm import llr_score, load_cm_pair, save_cm_pair
from .util import derive_seed


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.defaults()
    if getattr(args, "seed", None) is not None:
        config.values["seeds"]["seed"] = args.seed
    return config


def _emit_config(config: ExperimentConfig, out_path) -> None:
    out_path = Path(out_path)
    target = out_path / "resolved_config.ini" if out_path.is_dir() else (
        out_path.parent / (out_path.name + ".config.ini")
    )
    config.write_resolved(target)


def _load_dataset(protocol, audio_dir):
    return corpus.load_dataset(protocol, audio_dir)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> None:
    spec = corpus.synth_spec_from_json(args.spec)
    if args.seed is not None:
        spec = corpus.SynthSpec(
            n_bona=spec.n_bona, attacks=spec.attacks, duration_s=spec.duration_s,
            sample_rate=spec.sample_rate, seed=args.seed, splits=spec.splits,
        )
    out = Path(args.out)
    corpus.synth_corpus(spec, out)
    with open(out / "resolved_spec.json", "w") as fh:
        json.dump({
            "n_bona": spec.n_bona,
            "attacks": [
                {"attack_id": a.attack_id, "count": a.count, "f_lo": a.f_lo,
                 "f_hi": a.f_hi, "kind": a.kind, "snr_db": a.snr_db}
                for a in spec.attacks
            ],
            "duration_s": spec.duration_s,
            "sample_rate": spec.sample_rate,
            "seed": spec.seed,
            "splits": list(spec.splits),
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"synthesized corpus under {out} (splits: {', '.join(spec.splits)})")


def cmd_scenario(args) -> None:
    spec = corpus.scenario_spec_from_json(args.spec)
    if args.seed is not None:
        spec = corpus.ScenarioSpec(bona=spec.bona, attacks=spec.attacks, seed=args.seed)
    out = Path(args.out)
    splits = args.splits.split(",")
    for split in splits:
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        svs = corpus.synth_scenario(spec, split=split)
        trials = [
            corpus.Trial("S0000", u, a, k)
            for u, a, k in zip(svs.utterance_ids, svs.attack_ids, svs.keys)
        ]
        corpus.write_protocol(split_dir / "protocol.txt", trials)
        for dim in range(svs.dims):
            metrics.write_score_file(
                split_dir / f"cm{dim}.scores",
                svs.column_rows(dim),
                header_comment=f"scenario seed {spec.seed} split {split} cm {dim}",
            )
    print(f"wrote scenario score files under {out} (splits: {', '.join(splits)})")


def cmd_extract(args) -> None:
    config = _load_config(args)
    frontend = config.frontend()
    cache_dir = Path(args.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    trials = corpus.parse_protocol(args.protocol)
    audio_dir = Path(args.audio_dir or config.path("audio_dir"))
    for trial in trials:
        wave_obj = load_wav(audio_dir / f"{trial.utterance_id}.wav")
        feats = extract_lfcc(wave_obj, frontend)
        save_features(cache_dir / f"{trial.utterance_id}.lfcc", feats,
                      frontend.config_hash())
    _emit_config(config, cache_dir)
    print(f"extracted {len(trials)} utterances into {cache_dir}")


def _cached_features(cache_dir, trials, expected_hash):
    feats = {}
    for trial in trials:
        path = Path(cache_dir) / f"{trial.utterance_id}.lfcc"
        if not path.exists():
            raise DataError(f"missing cached features: {path}")
        feats[trial.utterance_id] = load_features(path, expected_hash)
    return feats


def cmd_train(args) -> None:
    config = _load_config(args)
    frontend = config.frontend()
    trials = corpus.parse_protocol(args.protocol)
    feats = _cached_features(args.cache_dir, trials, frontend.config_hash())
    bona = [feats[t.utterance_id] for t in trials if t.key == metrics.BONAFIDE]
    spoof = [feats[t.utterance_id] for t in trials if t.key == metrics.SPOOF]
    if not bona or not spoof:
        raise DataError("training protocol must contain both classes")
    cm = subband.train_cm(
        bona, spoof, config.gmm_k(), config.em_options(),
        derive_seed(config.seed(), "train"), frontend.config_hash(),
    )
    save_cm_pair(args.out, cm)
    _emit_config(config, args.out)
    print(f"trained countermeasure ({config.gmm_k()} components) -> {args.out}")


def cmd_score(args) -> None:
    cm = load_cm_pair(args.cm)
    trials = corpus.parse_protocol(args.protocol)
    feats = _cached_features(args.cache_dir, trials,
                             cm.frontend_config_hash or None)
    rows = [
        metrics.ScoreRow(t.utterance_id, t.attack_id, t.key,
                         llr_score(cm, feats[t.utterance_id]))
        for t in trials
    ]
    metrics.write_score_file(args.out, rows,
                             header_comment=f"config {cm.frontend_config_hash or '-'}")
    print(f"scored {len(rows)} trials -> {args.out}")


def cmd_sweep(args) -> None:
    config = _load_config(args)
    filters = [int(v) for v in args.filters.split(",")]
    train_set = _load_dataset(args.train_protocol, args.train_audio)
    dev_set = _load_dataset(args.dev_protocol, args.dev_audio)
    rows = subband.resolution_sweep(
        filters, train_set, dev_set, config.frontend(),
        k=config.gmm_k(), em_options=config.em_options(), costs=config.costs(),
        seed=derive_seed(config.seed(), "sweep"),
    )
    with open(args.out, "w") as fh:
        fh.write(f"# config {config.config_hash()}\n")
        fh.write("n_filters\tmin_tdcf\teer_pct\td_b\n")
        for row in rows:
            fh.write(f"{row.n_filters}\t{row.min_tdcf:.4f}\t"
                     f"{100.0 * row.eer:.2f}\t{row.bhattacharyya:.4f}\n")
    _emit_config(config, args.out)
    print(f"resolution sweep over N={filters} -> {args.out}")


def cmd_heatmap(args) -> None:
    config = _load_config(args)
    train_set = _load_dataset(args.train_protocol, args.train_audio)
    eval_set = _load_dataset(args.eval_protocol, args.eval_audio)
    hm = subband.build_heatmap(
        config.grid(), args.attack, train_set, eval_set, config.frontend(),
        k=config.gmm_k(), em_options=config.em_options(), costs=config.costs(),
        seed=derive_seed(config.seed(), "heatmap", args.attack), jobs=args.jobs,
    )
    if hm.failures:
        for cell, reason in sorted(hm.failures.items()):
            print(f"warning: cell {cell} failed: {reason}", file=sys.stderr)
    subband.save_heatmap_tsv(args.out, hm,
                             extra_comments=[f"config {config.config_hash()}"])
    _emit_config(config, args.out)
    print(f"heat-map for {args.attack}: {len(hm.values)} cells "
          f"({len(hm.failures)} failed) -> {args.out}")


def cmd_com(args) -> None:
    hm = subband.load_heatmap_tsv(args.heatmap)
    com = subband.center_of_mass(hm, epsilon=args.epsilon, bin_hz=args.bin_hz)
    subband.save_com_report(args.out, com,
                            extra_comments=[f"attack {hm.attack_id}",
                                            f"heatmap {args.heatmap}"])
    print(f"centre of mass: [{com.f_min_com:.1f}, {com.f_max_com:.1f}] Hz "
          f"(M={com.total_mass:.3f}) -> {args.out}")


def _check_against_protocol(svs, protocol_path) -> None:
    labels = {
        t.utterance_id: (t.attack_id, t.key)
        for t in corpus.parse_protocol(protocol_path)
    }
    for utt, attack, key in zip(svs.utterance_ids, svs.attack_ids, svs.keys):
        if utt not in labels:
            raise DataError(f"utterance {utt} not in protocol {protocol_path}")
        if labels[utt] != (attack, key):
            raise DataError(
                f"utterance {utt}: score files say ({attack}, {key}), "
                f"protocol says {labels[utt]}"
            )


def cmd_fuse_train(args) -> None:
    config = _load_config(args)
    svs = fusion.score_vectors_from_files(args.scores)
    if args.protocol:
        _check_against_protocol(svs, args.protocol)
    seed = derive_seed(config.seed(), "fusion", args.kind)
    if args.kind == fusion.KIND_LINEAR:
        model = fusion.train_linear_fusion(svs, config.logistic_options())
    elif args.kind == fusion.KIND_MULTINOMIAL:
        model = fusion.train_multinomial_fusion(svs, config.logistic_options())
    elif args.kind == fusion.KIND_GMM:
        model = fusion.train_gmm_fusion(svs, k=config.fusion_gmm_k(),
                                        em_options=config.em_options(seed))
    elif args.kind == fusion.KIND_SVM:
        model = fusion.train_svm_poly(svs, config.svm_options())
    else:
        raise ConfigurationError(f"unknown fusion kind {args.kind!r}")
    fusion.save_fusion_model(args.out, model)
    _emit_config(config, args.out)
    print(f"trained {args.kind} fusion on {svs.n_trials} trials -> {args.out}")


def cmd_fuse_apply(args) -> None:
    model = fusion.load_fusion_model(args.model)
    svs = fusion.score_vectors_from_files(args.scores)
    scores = fusion.fuse(model, svs)
    metrics.write_score_file(args.out, fusion.fused_rows(svs, scores),
                             header_comment=f"fusion {model.kind}")
    print(f"fused {svs.n_trials} trials with {model.kind} -> {args.out}")


def cmd_evaluate(args) -> None:
    config = _load_config(args)
    rows = metrics.read_score_file(args.scores)
    if args.protocol:
        trials = corpus.parse_protocol(args.protocol)
        labels = {t.utterance_id: (t.attack_id, t.key) for t in trials}
        scored = {r.utterance_id for r in rows}
        if scored != set(labels):
            raise DataError(
                f"score file covers {len(scored)} utterances but protocol "
                f"{args.protocol} lists {len(labels)}"
            )
        for r in rows:
            if labels[r.utterance_id] != (r.attack_id, r.key):
                raise DataError(f"utterance {r.utterance_id}: label mismatch with protocol")
    costs = config.costs()
    pooled = metrics.labeled_scores(rows)
    lines = [
        f"pooled eer {metrics.eer(pooled):.6f} "
        f"min_tdcf {metrics.min_tdcf(pooled, costs):.6f}"
    ]
    for attack in metrics.attack_ids(rows):
        per = metrics.labeled_scores(rows, attack)
        lines.append(
            f"attack {attack} eer {metrics.eer(per):.6f} "
            f"min_tdcf {metrics.min_tdcf(per, costs):.6f}"
        )
    with open(args.out, "w") as fh:
        fh.write(f"# config {config.config_hash()}\n")
        fh.write(f"# scores {args.scores}\n")
        fh.write("\n".join(lines) + "\n")
    if args.det:
        p_fa, p_miss = metrics.det_curve(pooled)
        with open(args.det, "w") as fh:
            fh.write("p_fa\tp_miss\n")
            for fa, miss in zip(p_fa, p_miss):
                fh.write(f"{fa:.6f}\t{miss:.6f}\n")
    print("\n".join(lines))


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="bandcm",
                     description="sub-band spoofing countermeasure toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic WAV corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = add("scenario", cmd_scenario, "generate score-cluster scenario files")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default="train,eval")
    p.add_argument("--seed", type=int)

    p = add("extract", cmd_extract, "extract LFCC features into a cache")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--protocol", required=True)
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--cache-dir", required=True)

    p = add("train", cmd_train, "train a bona fide / spoof GMM pair")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--protocol", required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--out", required=True)

    p = add("score", cmd_score, "score cached features with a countermeasure")
    p.add_argument("--cm", required=True)
    p.add_argument("--protocol", required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--out", required=True)

    p = add("sweep", cmd_sweep, "filter-count resolution sweep (TSV table)")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--filters", required=True, help="comma list, e.g. 20,30,40")
    p.add_argument("--train-protocol", required=True)
    p.add_argument("--train-audio", required=True)
    p.add_argument("--dev-protocol", required=True)
    p.add_argument("--dev-audio", required=True)
    p.add_argument("--out", required=True)

    p = add("heatmap", cmd_heatmap, "sub-band min t-DCF heat-map for one attack")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--attack", required=True)
    p.add_argument("--train-protocol", required=True)
    p.add_argument("--train-audio", required=True)
    p.add_argument("--eval-protocol", required=True)
    p.add_argument("--eval-audio", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = add("com", cmd_com, "centre of mass of a heat-map")
    p.add_argument("--heatmap", required=True)
    p.add_argument("--epsilon", type=float, default=subband.DEFAULT_EPSILON)
    p.add_argument("--bin-hz", type=float, default=None,
                   help="snap the result to this FFT bin width")
    p.add_argument("--out", required=True)

    p = add("fuse-train", cmd_fuse_train, "train a score fuser")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--kind", required=True,
                   choices=[fusion.KIND_LINEAR, fusion.KIND_MULTINOMIAL,
                            fusion.KIND_GMM, fusion.KIND_SVM])
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--protocol")
    p.add_argument("--out", required=True)

    p = add("fuse-apply", cmd_fuse_apply, "apply a trained fuser")
    p.add_argument("--model", required=True)
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "EER and min t-DCF report")
    p.add_argument("--config")
    p.add_argument("--scores", required=True)
    p.add_argument("--protocol")
    p.add_argument("--det", help="also write a DET staircase TSV here")
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except ConfigurationError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except BandcmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
