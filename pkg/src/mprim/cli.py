"""Command-line pipeline: discover, cluster, recognize, bench, track, behavior.

Settings come from defaults, then an optional ``--config`` JSON file, then
explicit flags. Every output is accompanied by a ``.meta.json`` sidecar
recording the resolved settings. Exit status is 0 on success, 3 for input
errors, 4 for numerical failures and 5 for I/O errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .behavior import (DEFAULT_C, DEFAULT_GAMMA, BehaviorModel, danger_probability, read_samples_csv, roc_auc,
                       train_behavior)
from .classes import apply_labels, classes_from_components, hausdorff_table, read_label_csv
from .dpm import McmcConfig, fit_dpm
from .errors import ConfigurationError, InputError, MalformedInput, NumericError
from .features import featureset_from_primitives, sample_trajectory
from .flux import (FluxParams, GroupKinematics, anatomical_normalize, find_onset, primitive_between,
                   primitives_to_csv, read_primitive_csv, segment_sequence)
from .recognition import (DEFAULT_DELTA, class_models_from_json, class_models_to_json, fit_class_models,
                          recognize)
from .skeleton import GROUP_NAMES, SkeletonSequence, parse_sequence, resample, serialize_sequence
from .synth import behavior_corpus, recognition_benchmark, run_benchmark
from .tracking import R_MAX, parse_frames_json, track_sequence, track_to_sequence

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 3, 4, 5

DEFAULTS = {
    "rate": 50.0, "beta_v": FluxParams.beta_v, "beta_s": FluxParams.beta_s, "delta": DEFAULT_DELTA,
    "seed": 0, "chains": 4, "iters": 2000, "burnin": None, "n_sequences": 100, "kind": "endpoints",
    "r_max": R_MAX, "C": DEFAULT_C, "gamma": DEFAULT_GAMMA, "crop_frames": 0,
}


# ----------------------------------------------------------------------------
# configuration and I/O helpers


def _resolve(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigurationError(f"{args.config}: top level must be an object")
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise ConfigurationError(f"{args.config}: unknown keys {sorted(unknown)}")
    out = {}
    for key, default in DEFAULTS.items():
        val = getattr(args, key, None)
        out[key] = val if val is not None else cfg.get(key, default)
    if out["burnin"] is None:
        out["burnin"] = out["iters"] // 4
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MPRIM_THREADS", "1")))
    except ValueError as exc:
        raise ConfigurationError("MPRIM_THREADS must be an integer") from exc


def _flux(cfg) -> FluxParams:
    return FluxParams(beta_v=float(cfg["beta_v"]), beta_s=float(cfg["beta_s"]))


def _mcmc(cfg) -> McmcConfig:
    return McmcConfig(iters=int(cfg["iters"]), burnin=int(cfg["burnin"]), chains=int(cfg["chains"]),
                      seed=int(cfg["seed"]), n_jobs=min(_threads(), int(cfg["chains"])))


def _write(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


def _meta(path: str | Path, command: str, cfg: dict, extra: dict | None = None) -> None:
    doc = {"command": command, "version": __version__, "config": cfg, **(extra or {})}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def _outputs_distinct(inputs, out) -> None:
    if out is None:
        return
    o = Path(out).resolve()
    for i in inputs:
        if i and Path(i).resolve() == o:
            raise ConfigurationError(f"output {out} would overwrite an input")


def _sequence_files(inputs) -> list[Path]:
    files = []
    for i in inputs:
        p = Path(i)
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".json", ".csv")))
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(f"{p}: no such file or directory")
    return files


def _load_sequence(path: Path, rate: float):
    text = path.read_text()
    try:
        if path.suffix.lower() == ".csv":
            seq = parse_sequence(text, "csv", rate=rate, seq_id=path.stem)
        else:
            seq = parse_sequence(text, "json")
    except InputError as exc:
        raise type(exc)(f"{path}: {exc}") from exc
    if not seq.id:
        seq = SkeletonSequence(seq.quaternions, seq.translations, seq.rate, path.stem, seq.position_only, seq.spec)
    return resample(seq, rate) if abs(seq.rate - rate) > 1e-12 else seq


def _load_sequences(inputs, rate) -> dict:
    out = {}
    for f in _sequence_files(inputs):
        seq = _load_sequence(f, rate)
        out[seq.id] = seq
    return out


def _discover(seqs: dict, params: FluxParams) -> list:
    prims = []
    for sid, seq in seqs.items():
        for g in sorted(GROUP_NAMES):
            kin = GroupKinematics.from_sequence(seq, g)
            found = segment_sequence(kin, params)
            if not found:
                continue
            first_end = found[0].interval[1]
            found[0] = primitive_between(kin, find_onset(kin, first_end, params), first_end)
            prims.extend(anatomical_normalize(p, kin) for p in found)
    return prims


def _primitives_from_csv(rows, seqs: dict) -> list:
    kins, prims = {}, []
    for r in rows:
        sid, g = r["sequence_id"], int(r["group"])
        if sid not in seqs:
            raise MalformedInput(f"primitive refers to unknown sequence {sid!r}")
        if (sid, g) not in kins:
            kins[sid, g] = GroupKinematics.from_sequence(seqs[sid], g)
        kin = kins[sid, g]
        t0, t1 = (r["start_frame"] - 1) / kin.rate, (r["end_frame"] - 1) / kin.rate
        prim = anatomical_normalize(primitive_between(kin, t0, t1), kin)
        if r.get("label"):
            prim = replace(prim, label=r["label"])
        prims.append(prim)
    return prims


# ----------------------------------------------------------------------------
# commands


def cmd_discover(args, cfg) -> None:
    _outputs_distinct(args.input, args.out)
    seqs = _load_sequences(args.input, float(cfg["rate"]))
    prims = _discover(seqs, _flux(cfg))
    _write(args.out, primitives_to_csv(prims))
    if args.out:
        _meta(args.out + ".meta.json", "discover", cfg, {"n_primitives": len(prims)})


def cmd_cluster(args, cfg) -> None:
    _outputs_distinct(list(args.input) + [args.primitives], args.out)
    seqs = _load_sequences(args.input, float(cfg["rate"]))
    prims = _primitives_from_csv(read_primitive_csv(Path(args.primitives).read_text()), seqs)
    labels = read_label_csv(Path(args.labels).read_text()) if args.labels else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mcmc = _mcmc(cfg)
    all_classes, summary = [], {}
    for g in sorted(GROUP_NAMES):
        idx = [i for i, p in enumerate(prims) if p.group == g]
        members = [prims[i] for i in idx]
        fs = featureset_from_primitives(members)
        if len(fs) == 0:
            continue
        model = fit_dpm(fs.geometric, config=mcmc)
        (out / f"group{g}_model.json").write_text(model.to_json())
        classes = classes_from_components(model, fs)
        table = hausdorff_table(classes, lambda m: sample_trajectory(members[m].trajectories[2]).points)
        summary[GROUP_NAMES[g]] = {"k": model.k, "alpha": model.alpha, "classes": len(classes),
                                   "hausdorff": table.tolist()}
        all_classes.extend((members, c) for c in classes)
    labelled = apply_labels([c for _, c in all_classes], labels)
    doc, class_models = [], []
    for (members, _), c in zip(all_classes, labelled):
        doc.append({"group": c.group, "class_index": c.index, "label": c.label,
                    "representative": c.representative,
                    "members": [{"sequence_id": members[m].sequence_id, "start_frame": members[m].frames[0],
                                 "end_frame": members[m].frames[1]} for m in c.members]})
        class_models.extend(fit_class_models([c], members, mcmc))
    (out / "classes.json").write_text(json.dumps(doc, indent=2))
    (out / "class_models.json").write_text(class_models_to_json(class_models))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    _meta(out / "meta.json", "cluster", cfg)


def cmd_recognize(args, cfg) -> None:
    _outputs_distinct(list(args.input) + [args.models], args.out)
    mpath = Path(args.models) / "class_models.json"
    if not mpath.exists():
        raise ConfigurationError(f"{args.models}: no class_models.json (run the cluster command first)")
    models = class_models_from_json(mpath.read_text())
    if not models:
        raise ConfigurationError(f"{args.models}: no class models")
    seqs = _load_sequences(args.input, float(cfg["rate"]))
    if args.primitives:
        prims = _primitives_from_csv(read_primitive_csv(Path(args.primitives).read_text()), seqs)
    else:
        prims = _discover(seqs, _flux(cfg))
    reports = []
    for p in prims:
        cand = [m for m in models if m.group == p.group]
        if not cand:
            continue
        reports.append(recognize(cand, p, float(cfg["delta"])).report(p))
    _write(args.out, json.dumps(reports, indent=2))
    if args.out:
        _meta(args.out + ".meta.json", "recognize", cfg)


def cmd_bench(args, cfg) -> None:
    kind = cfg["kind"]
    seed = int(cfg["seed"])
    if kind == "endpoints":
        rep = run_benchmark(int(cfg["n_sequences"]), _flux(cfg), seed)
        print(f"runtime {rep.runtime_s:.2f} s", file=sys.stderr)
        text = rep.to_json()
    elif kind == "recognition":
        rep = recognition_benchmark(seed=seed, config=McmcConfig(
            iters=int(cfg["iters"]), burnin=int(cfg["burnin"]), chains=int(cfg["chains"]), seed=seed),
            delta=float(cfg["delta"]))
        text = rep.to_json()
    elif kind == "behavior":
        samples = behavior_corpus(seed=seed)
        subjects = sorted({s.subject for s in samples})
        test_subj = set(np.random.default_rng(seed).permutation(subjects)[: len(subjects) // 5])
        train = [s for s in samples if s.subject not in test_subj]
        test = [s for s in samples if s.subject in test_subj]
        model = train_behavior(train, float(cfg["C"]), float(cfg["gamma"]), seed=seed)
        _, _, _, auc = roc_auc(model.probability([s.x(model.embedding) for s in test]), [s.y for s in test])
        text = json.dumps({"n_train": len(train), "n_test": len(test), "auc": auc}, indent=2, sort_keys=True)
    else:
        raise ConfigurationError(f"unknown benchmark kind {kind!r}")
    _write(args.out, text + "\n")
    if args.out:
        _meta(args.out + ".meta.json", "bench", cfg)


def cmd_track(args, cfg) -> None:
    _outputs_distinct([args.input], args.out)
    rate, frames = parse_frames_json(Path(args.input).read_text())
    tracks = track_sequence(frames, float(cfg["r_max"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = []
    for tr in tracks:
        name = f"track-{tr.track_id}"
        doc.append({"track": tr.track_id, "frames": [t + 1 for t in tr.frames],
                    "detections": [frames[t][j].detection_id for t, j in zip(tr.frames, tr.detections)],
                    "residuals": [s.residual for s in tr.steps]})
        (out / f"{name}.json").write_text(serialize_sequence(track_to_sequence(tr, frames, rate, name)))
    (out / "tracks.json").write_text(json.dumps(doc, indent=2))
    _meta(out / "meta.json", "track", cfg, {"n_tracks": len(tracks)})


def _crop(samples, n: int):
    if n <= 0:
        return samples
    span = {}
    for s in samples:
        lo, hi = span.get(s.subject, (s.frame, s.frame))
        span[s.subject] = (min(lo, s.frame), max(hi, s.frame))
    return [s for s in samples if span[s.subject][0] + n <= s.frame <= span[s.subject][1] - n]


def cmd_behavior(args, cfg) -> None:
    _outputs_distinct([args.input, getattr(args, "model", None)], args.out)
    samples = read_samples_csv(Path(args.input).read_text())
    if args.action == "train":
        samples = _crop(samples, int(cfg["crop_frames"]))
        model = train_behavior(samples, float(cfg["C"]), float(cfg["gamma"]), seed=int(cfg["seed"]))
        _write(args.out, model.to_json())
        if args.out:
            _meta(args.out + ".meta.json", "behavior train", cfg, {"n_samples": len(samples)})
        return
    if not args.model:
        raise ConfigurationError("behavior eval needs --model")
    model = BehaviorModel.from_json(Path(args.model).read_text())
    probs = model.probability(np.array([s.x(model.embedding) for s in samples]))
    fpr, tpr, thr, auc = roc_auc(probs, [s.y for s in samples])
    per_frame = {}
    for s, p in zip(samples, probs):
        per_frame.setdefault(s.frame, []).append(float(p))
    doc = {"auc": auc, "fpr": fpr.tolist(), "tpr": tpr.tolist(),
           "thresholds": [None if not np.isfinite(t) else float(t) for t in thr],
           "frames": [{"frame": f, "probability": danger_probability(ps)} for f, ps in sorted(per_frame.items())]}
    _write(args.out, json.dumps(doc, indent=2))
    if args.out:
        _meta(args.out + ".meta.json", "behavior eval", cfg)


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mprim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, inputs="+"):
        sp.add_argument("--config", help="JSON file with default settings")
        if inputs:
            sp.add_argument("--input", nargs=inputs, required=True)
        sp.add_argument("--out")
        sp.add_argument("--rate", type=float)
        sp.add_argument("--seed", type=int)
        return sp

    def flux(sp):
        sp.add_argument("--beta-v", dest="beta_v", type=float)
        sp.add_argument("--beta-s", dest="beta_s", type=float)

    def mcmc(sp):
        sp.add_argument("--chains", type=int)
        sp.add_argument("--iters", type=int)
        sp.add_argument("--burnin", type=int)

    d = common(sub.add_parser("discover", help="segment sequences into primitives (CSV)"))
    flux(d)
    c = common(sub.add_parser("cluster", help="cluster primitives into classes"))
    c.set_defaults(out_required=True)
    c.add_argument("--primitives", required=True)
    c.add_argument("--labels")
    mcmc(c)
    r = common(sub.add_parser("recognize", help="label primitives with class models"))
    r.add_argument("--models", required=True)
    r.add_argument("--primitives")
    r.add_argument("--delta", type=float)
    flux(r)
    b = common(sub.add_parser("bench", help="synthetic benchmarks"), inputs=None)
    b.add_argument("--kind", choices=["endpoints", "recognition", "behavior"])
    b.add_argument("--n-sequences", dest="n_sequences", type=int)
    b.add_argument("--delta", type=float)
    b.add_argument("-C", dest="C", type=float)
    b.add_argument("--gamma", type=float)
    flux(b)
    mcmc(b)
    t = common(sub.add_parser("track", help="associate multi-subject detections"), inputs=None)
    t.set_defaults(out_required=True)
    t.add_argument("--input", required=True)
    t.add_argument("--r-max", dest="r_max", type=float)
    h = common(sub.add_parser("behavior", help="train or evaluate the behavior classifier"), inputs=None)
    h.add_argument("action", choices=["train", "eval"])
    h.add_argument("--input", required=True)
    h.add_argument("--model")
    h.add_argument("-C", dest="C", type=float)
    h.add_argument("--gamma", type=float)
    h.add_argument("--crop-frames", dest="crop_frames", type=int)
    return p


COMMANDS = {"discover": cmd_discover, "cluster": cmd_cluster, "recognize": cmd_recognize, "bench": cmd_bench,
            "track": cmd_track, "behavior": cmd_behavior}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "out_required", False) and not args.out:
        print("input error: --out is required for this command", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = _resolve(args)
        COMMANDS[args.command](args, cfg)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
