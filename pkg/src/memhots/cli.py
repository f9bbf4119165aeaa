"""``memhots`` command-line interface.

Every command writes its outputs plus a ``manifest.json`` into ``--out``; the
manifest records the resolved arguments, derived seeds, package version and
SHA-256 digests of inputs and outputs, and ``memhots replay`` re-runs it.

Exit status: 0 success, 1 usage error, 2 data error, 3 non-convergence.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (MIConfig, layer_dislocation, mi_loss, mutual_information, noise_sweep,
                       write_json, write_mi_csv, write_sweep_csv)
from .device import NoiseMode, ResampleWarning, get_preset, load_presets, simulate
from .events import (DatasetError, FormatError, load_bin, sample_slice, save_cache)
from .experiments import ProtocolConfig, evaluate, noise_seed, train_model
from .fitting import (RankDeficiencyError, fit_decay, format_summary, normalize_trace,
                      peak_reference, read_onset_manifest, read_trace_csv, summarize,
                      write_results_json)
from .network import NetworkModel, NotTrainedError
from .rng import substream_seed
from .surfaces import KernelMode, encode_stream

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NONCONVERGED = 0, 1, 2, 3

log = logging.getLogger("memhots")


class UsageError(Exception):
    pass


class NonConvergence(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# -- helpers -------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def digest_files(paths):
    """Combined digest of several files, in the given order."""
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).name.encode())
        h.update(bytes.fromhex(sha256_file(p)))
    return h.hexdigest()


def int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def fraction(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("fraction must lie in (0, 1]")
    return v


def _require_file(path, what="file"):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def write_manifest(args, out, inputs, outputs, seeds=None):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "argv")}
    doc = {
        "version": __version__,
        "command": args.command,
        "argv": args.argv,
        "config": json.loads(json.dumps(config, default=str)),
        "seeds": seeds or {},
        "inputs": inputs,
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _dump_json(doc, path):
    write_json(doc, path)
    return path


# -- fit -----------------------------------------------------------------------

def cmd_fit(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    onsets = read_onset_manifest(_require_file(args.manifest, "onset manifest")) \
        if args.manifest else {}
    traces = []
    for path in args.traces:
        _require_file(path, "trace")
        name = Path(path).name
        if name in onsets:
            t0, width = onsets[name]
        elif args.t0_us is not None and args.width_us is not None:
            t0, width = args.t0_us, args.width_us
        else:
            raise UsageError(f"no onset/width for {name}; pass --t0-us and --width-us "
                             "or list it in --manifest")
        traces.append(read_trace_csv(path, t0, width))
    if args.peak_reference is not None:
        ref = args.peak_reference
    elif args.raw:
        ref = peak_reference(traces)
    else:
        ref = None
    if ref is not None:
        traces = [normalize_trace(tr, ref) for tr in traces]
    results = [fit_decay(tr, args.max_iter) for tr in traces]
    summary = summarize(results)
    summary["peak_reference"] = ref
    fits = out / "fits.json"
    write_results_json(results, fits, summary)
    table = out / "summary.txt"
    table.write_text(format_summary(summary, args.label) + "\n")
    print(table.read_text(), end="")
    write_manifest(args, out, {Path(p).name: sha256_file(p) for p in args.traces}, [fits, table])
    bad = [r.name for r in results if not r.converged]
    if bad:
        raise NonConvergence(f"fit did not converge for: {', '.join(bad)}")


# -- simulate ------------------------------------------------------------------

def read_schedule(path):
    with open(_require_file(path, "pulse schedule"), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "t_us" not in reader.fieldnames:
            raise FormatError(f"{path}: expected a header with a t_us column")
        return np.array([float(row["t_us"]) for row in reader])


def cmd_simulate(args):
    pulses = read_schedule(args.schedule)
    if len(pulses) == 0:
        raise FormatError("pulse schedule is empty")
    if np.any(np.diff(pulses) <= 0):
        raise FormatError("pulse times must be strictly increasing")
    dist = get_preset(args.preset)
    start = pulses[0] + dist.mean.width if args.start_us is None else args.start_us
    end = pulses[-1] + args.duration_us
    times = start + args.sample_every_us * np.arange(int((end - start) // args.sample_every_us) + 1)
    seed = substream_seed(args.seed, "device")
    mode = NoiseMode.noisy(seed, args.per_device) if args.mode == "noisy" else NoiseMode.ideal()
    g = simulate(pulses, times, dist, mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "conductance.csv"
    with open(path, "w") as fh:
        fh.write("t_us,g\n")
        for t, v in zip(times, g):
            fh.write(f"{float(t)!r},{float(v)!r}\n")
    write_manifest(args, out, {"schedule": sha256_file(args.schedule)}, [path],
                   {"device": seed})


# -- dataset -------------------------------------------------------------------

def cmd_dataset(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.action == "synth":
        from .synthetic import make_corpus

        root = out / "corpus"
        make_corpus(root, args.n_train, args.n_test, args.seed)
        files = sorted(root.rglob("*.bin"))
        listing = out / "files.txt"
        listing.write_text("".join(f"{f.relative_to(root)}\n" for f in files))
        write_manifest(args, out, {}, [listing], {"synthetic": args.seed})
        return
    sl = sample_slice(args.dataset_root, args.split, args.fraction, args.seed, args.crop28)
    seeds = {"dataset": substream_seed(args.seed, f"dataset/{sl.split}")}
    inputs = {"slice": digest_files(sl.files)}
    if args.action == "slice":
        path = out / "slice.csv"
        with open(path, "w") as fh:
            fh.write("file,label\n")
            for f, label in zip(sl.files, sl.labels):
                fh.write(f"{Path(f).relative_to(Path(args.dataset_root))},{label}\n")
        write_manifest(args, out, inputs, [path], seeds)
    else:
        path = out / "events.mhev"
        save_cache(sl.recordings, path)
        write_manifest(args, out, inputs, [path], seeds)


# -- train / eval --------------------------------------------------------------

def _protocol(args):
    return ProtocolConfig(
        dataset_root=args.dataset_root, fraction=args.fraction, seed=args.seed,
        crop28=args.crop28, clusters=args.clusters, radii=args.radii, pool=args.pool,
        kernel=args.kernel, preset=args.preset, classifiers=_classifier_kinds(args.classifier),
        surfaces_per_layer=args.surfaces, batch_size=args.batch_size, max_iter=args.kmeans_iter,
        n_jobs=args.jobs,
    )


def _classifier_kinds(name):
    return ("hist", "svc") if name == "both" else (name,)


def cmd_train(args):
    if len(args.clusters) != args.layers or len(args.radii) != args.layers:
        raise UsageError("--clusters and --radii need one value per layer")
    get_preset(args.preset)
    cfg = _protocol(args)
    sl = sample_slice(args.dataset_root, "train", args.fraction, args.seed, args.crop28)
    net, classifiers = train_model(cfg, sl.recordings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = NetworkModel(net, classifiers, {"seed": args.seed, "fraction": args.fraction,
                                            "crop28": args.crop28})
    path = out / "model.npz"
    model.save(path)
    seeds = {"dataset": substream_seed(args.seed, "dataset/train"),
             "kmeans": [substream_seed(args.seed, f"kmeans/{k}") for k in range(args.layers)]}
    write_manifest(args, out, {"train_slice": digest_files(sl.files)}, [path], seeds)
    stalled = [f"{k}@{d}" for (d, k), c in classifiers.items()
               if not getattr(c, "converged_", True)]
    if stalled:
        raise NonConvergence(f"SVC training hit the iteration limit: {', '.join(stalled)}")


def _load_model(path):
    _require_file(path, "model")
    try:
        return NetworkModel.load(path)
    except (KeyError, ValueError, OSError) as exc:
        raise FormatError(f"cannot read model {path}: {exc}")


def _eval_slice(args, model):
    crop = model.meta.get("crop28", False) if args.crop28 is None else args.crop28
    return sample_slice(args.dataset_root, args.split, args.fraction, args.seed, crop)


def _mode(args):
    seed = noise_seed(args.seed if args.noise_seed is None else args.noise_seed)
    return (NoiseMode.noisy(seed) if args.mode == "noisy" else NoiseMode.ideal()), seed


def cmd_eval(args):
    model = _load_model(args.model)
    sl = _eval_slice(args, model)
    recs = sl.recordings
    mode, seed = _mode(args)
    kinds = _classifier_kinds(args.classifier)
    clfs = {k: c for k, c in model.classifiers.items()
            if k[1] in kinds and (args.depth is None or k[0] == args.depth)}
    if not clfs:
        raise UsageError("the model holds no classifier matching --classifier/--depth")
    enc = model.network.encode(recs, mode)
    acc = evaluate(model.network, clfs, enc, [r.label for r in recs])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _dump_json({"mode": args.mode, "split": args.split, "n": len(recs),
                       "accuracy": acc}, out / "metrics.json")
    for key, value in sorted(acc.items()):
        print(f"{key}: {100 * value:.2f}%")
    write_manifest(args, out, {"model": sha256_file(args.model), "slice": digest_files(sl.files)},
                   [path], {"device": seed if args.mode == "noisy" else None})


# -- analyze -------------------------------------------------------------------

def cmd_analyze(args):
    model = _load_model(args.model)
    net = model.network
    sl = _eval_slice(args, model)
    recs = sl.recordings
    y = [r.label for r in recs]
    seed = noise_seed(args.seed if args.noise_seed is None else args.noise_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    seeds = {"device": seed}
    if args.action == "sweep":
        clfs = {k: c for k, c in model.classifiers.items()}
        mi_cfg = MIConfig(tuple(d * 1000 for d in args.deltas_ms), args.draws,
                          substream_seed(args.seed, "mi")) if args.with_mi else None
        points = noise_sweep(net, clfs, recs, args.multipliers, seed, mi_cfg)
        outputs.append(out / "sweep.csv")
        write_sweep_csv(points, outputs[-1])
        outputs.append(_dump_json({"points": points}, out / "sweep.json"))
    else:
        ideal = net.encode(recs)
        noisy = net.encode(recs, NoiseMode.noisy(seed))
        layers = [args.layer] if args.layer else list(range(1, len(net.layers_) + 1))
        if args.action == "dislocation":
            doc = {str(d): layer_dislocation(ideal, noisy, d) for d in layers}
            outputs.append(_dump_json({"dislocation": doc}, out / "dislocation.json"))
            for d, v in doc.items():
                print(f"layer {d}: {100 * v:.2f}% of events reassigned")
        else:
            mi_seed = substream_seed(args.seed, "mi")
            seeds["mi"] = mi_seed
            cfg = MIConfig(tuple(d * 1000.0 for d in args.deltas_ms), args.draws, mi_seed)
            uids = [r.uid for r in recs]
            summary = {}
            for d in layers:
                n = net.layers_[d - 1].n_clusters
                ri = mutual_information([e.output(d) for e in ideal], y, n, cfg, uids, "ideal")
                rn = mutual_information([e.output(d) for e in noisy], y, n, cfg, uids, "noisy")
                path = out / f"mi_layer{d}.csv"
                write_mi_csv([ri, rn], path)
                outputs.append(path)
                summary[str(d)] = {"deltas_us": ri.deltas_us, "ideal": ri.mi, "noisy": rn.mi,
                                   "loss": mi_loss(ri, rn)}
            outputs.append(_dump_json(summary, out / "mi.json"))
    write_manifest(args, out, {"model": sha256_file(args.model), "slice": digest_files(sl.files)},
                   outputs, seeds)


def cmd_sweep(args):
    args.action = "sweep"
    cmd_analyze(args)


# -- surfaces ------------------------------------------------------------------

def cmd_dump_surfaces(args):
    rec = load_bin(_require_file(args.recording, "recording"), uid=0)
    dist = get_preset(args.preset)
    kernel = KernelMode.memristor() if args.kernel == "memristor" \
        else KernelMode.single_exp(args.tau_ms * 1000.0)
    seed = substream_seed(args.seed, "device")
    mode = NoiseMode.noisy(seed) if args.mode == "noisy" else NoiseMode.ideal()
    n = len(rec.events) if args.limit is None else min(args.limit, len(rec.events))
    res = encode_stream(rec.events[:n], rec.height, rec.width, rec.n_polarities, args.radius,
                        dist, kernel, mode, (0, rec.uid), want=np.ones(n, dtype=bool))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "surfaces.npz"
    with open(path, "wb") as fh:
        np.savez(fh, surfaces=res.surfaces, events=rec.events[:n])
    write_manifest(args, out, {"recording": sha256_file(args.recording)}, [path],
                   {"device": seed})


# -- replay --------------------------------------------------------------------

def cmd_replay(args):
    doc = json.loads(Path(_require_file(args.manifest, "manifest")).read_text())
    argv = list(doc["argv"])
    if args.out:
        i = argv.index("--out")
        argv[i + 1] = args.out
    out = Path(argv[argv.index("--out") + 1])
    code = main(argv)
    if code != EXIT_OK:
        return code
    fresh = json.loads((out / "manifest.json").read_text())
    if fresh["outputs"] != doc["outputs"]:
        changed = sorted(k for k in doc["outputs"] if fresh["outputs"].get(k) != doc["outputs"][k])
        print(f"replay differs in: {', '.join(changed)}", file=sys.stderr)
        return EXIT_DATA
    print("replay reproduced all outputs")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _add_slice_args(p, split=True, crop_default=False):
    p.add_argument("--dataset-root", required=True)
    if split:
        p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--fraction", type=fraction, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    if crop_default is None:
        p.add_argument("--crop28", action="store_true", default=None)
    else:
        p.add_argument("--crop28", action="store_true", default=crop_default)


def build_parser():
    parser = _Parser(prog="memhots", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    jobs = max(1, os.cpu_count() or 1)

    p = sub.add_parser("fit", help="fit two-exponential decays to single-pulse traces")
    p.add_argument("traces", nargs="+", help="CSV files with header t_us,g")
    p.add_argument("--t0-us", type=float)
    p.add_argument("--width-us", type=float)
    p.add_argument("--manifest", help="CSV with columns file,t0_us,width_us")
    p.add_argument("--raw", action="store_true",
                   help="traces are raw; remove baselines and normalize by the group peak")
    p.add_argument("--peak-reference", type=float)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--label", default="group")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="conductance response to a pulse schedule")
    p.add_argument("--schedule", required=True, help="CSV with a t_us column")
    p.add_argument("--preset", default="1V_200us")
    p.add_argument("--mode", choices=["ideal", "noisy"], default="ideal")
    p.add_argument("--per-device", action="store_true",
                   help="draw parameters once per device instead of per pulse")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-every-us", type=float, default=6000.0)
    p.add_argument("--start-us", type=float, help="first sample (default: end of first pulse)")
    p.add_argument("--duration-us", type=float, default=1e6,
                   help="sampling continues this long after the last pulse")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dataset", help="synthesize, slice or cache event datasets")
    dsub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = dsub.add_parser("synth", help="small N-MNIST-like corpus from 8x8 digits")
    q.add_argument("--n-train", type=int, default=20)
    q.add_argument("--n-test", type=int, default=10)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    for action in ("slice", "cache"):
        q = dsub.add_parser(action)
        _add_slice_args(q)
        q.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="learn codebooks and classifiers")
    _add_slice_args(p, split=False)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--clusters", type=int_list, default=(32, 64))
    p.add_argument("--radii", type=int_list, default=(7, 3))
    p.add_argument("--pool", type=int, default=7)
    p.add_argument("--kernel", choices=["memristor", "single_exp"], default="memristor")
    p.add_argument("--preset", default="1V_200us")
    p.add_argument("--classifier", choices=["hist", "svc", "both"], default="both")
    p.add_argument("--surfaces", type=int, default=60_000,
                   help="training surfaces sampled per layer")
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--kmeans-iter", type=int, default=300)
    p.add_argument("--jobs", type=int, default=jobs)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a trained model")
    p.add_argument("--model", required=True)
    _add_slice_args(p, crop_default=None)
    p.add_argument("--mode", choices=["ideal", "noisy"], default="ideal")
    p.add_argument("--noise-seed", type=int)
    p.add_argument("--classifier", choices=["hist", "svc", "both"], default="both")
    p.add_argument("--depth", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    def analysis_args(q):
        q.add_argument("--model", required=True)
        _add_slice_args(q, crop_default=None)
        q.add_argument("--noise-seed", type=int)
        q.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="mutual information, dislocation, noise sweeps")
    asub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for action in ("mi", "dislocation"):
        q = asub.add_parser(action)
        analysis_args(q)
        q.add_argument("--layer", type=int)
        q.add_argument("--deltas-ms", type=float_list, default=(1, 2, 5, 10, 20, 50, 100, 200))
        q.add_argument("--draws", type=int, default=20)
    q = asub.add_parser("sweep")
    analysis_args(q)
    q.add_argument("--multipliers", type=float_list, default=(0, 1, 2, 5, 10))
    q.add_argument("--with-mi", action="store_true")
    q.add_argument("--deltas-ms", type=float_list, default=(1, 2, 5, 10, 20, 50, 100, 200))
    q.add_argument("--draws", type=int, default=20)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="noise-multiplier sweep")
    ssub = p.add_subparsers(dest="target", required=True, parser_class=_Parser)
    q = ssub.add_parser("noise")
    analysis_args(q)
    q.add_argument("--multipliers", type=float_list, default=(0, 1, 2, 5, 10))
    q.add_argument("--with-mi", action="store_true")
    q.add_argument("--deltas-ms", type=float_list, default=(1, 2, 5, 10, 20, 50, 100, 200))
    q.add_argument("--draws", type=int, default=20)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dump-surfaces", help="first-layer time surfaces of one recording")
    p.add_argument("--recording", required=True, help="N-MNIST .bin file")
    p.add_argument("--radius", type=int, default=7)
    p.add_argument("--preset", default="1V_200us")
    p.add_argument("--kernel", choices=["memristor", "single_exp"], default="memristor")
    p.add_argument("--tau-ms", type=float, default=5.0)
    p.add_argument("--mode", choices=["ideal", "noisy"], default="ideal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_surfaces)

    p = sub.add_parser("presets", help="list the shipped device presets")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("replay", help="re-run a command from its manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out", help="write into this directory instead of the original one")
    p.set_defaults(func=cmd_replay)
    _add_verbose(parser)
    return parser


def _add_verbose(parser):
    """Accept ``-v`` after the subcommand too."""
    subs = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    if not subs:
        parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    for action in subs:
        for child in action.choices.values():
            _add_verbose(child)


def cmd_presets(args):
    for name, d in load_presets().items():
        m = d.mean
        print(f"{name}: a1={m.a1}±{d.a1_std} a2={m.a2}±{d.a2_std} "
              f"tau1={m.tau1 / 1000:g}ms tau2={m.tau2 / 1000:g}ms w={m.width:g}us "
              f"eta={m.eta_sigma}")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:           # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.argv = argv
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default", ResampleWarning)
            code = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except RankDeficiencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (OSError, DatasetError, FormatError, NotTrainedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
