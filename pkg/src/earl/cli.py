"""Command-line interface.

Subcommands: prepare, train, eval, ablate, sweep, count-params.
Config precedence: explicit CLI flag > --config key=value file >
built-in default. Relative dataset/bundle paths fall back to
$EARL_DATA_DIR when they do not resolve from the working directory.

Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numerical failure.

Flag help marks each default as a "reported setting" (the published
training setup this implementation follows) or an "implementation
choice" (ours).
"""

import argparse
import datetime
import hashlib
import json
import os
import sys
from dataclasses import asdict

from . import __version__
from .errors import ConfigError, DataError, EarlError, NumericalError

# (|E|, |R|) of the common benchmarks, for offline parameter counting.
DATASET_STATS = {
    "fb15k237": (14505, 237),
    "wn18rr": (40559, 11),
    "codex-l": (77951, 69),
    "yago3-10": (123143, 37),
}

REPORTED = "[reported setting]"
CHOICE = "[implementation choice]"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def resolve_data_path(path: str) -> str:
    """Literal path if it exists, else relative to $EARL_DATA_DIR."""
    if os.path.exists(path):
        return path
    root = os.environ.get("EARL_DATA_DIR")
    if root:
        candidate = os.path.join(root, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command, config, datasets, seed, outputs, started):
    """One run_manifest.json per command invocation; artifacts reference
    it by this fixed file name."""
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "datasets": datasets,
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": sorted(outputs),
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


# ---------------------------------------------------------------------------
# config flags shared by train/ablate/sweep (and partially by prepare)

_CONFIG_FLAG_SPECS = [
    ("dim", int, f"complex embedding dimension; entity rows carry 2*dim reals {CHOICE}"),
    ("k", int, f"reserved neighbors retrieved per entity {REPORTED}"),
    ("reserved_fraction", float, f"fraction of entities that keep trainable embeddings {REPORTED}"),
    ("reserved_count", int, f"explicit reserved-set size, overrides the fraction {CHOICE}"),
    ("layers", int, f"message-passing layers {REPORTED}"),
    ("learning_rate", float, f"Adam learning rate {REPORTED}"),
    ("batch_size", int, f"positives per step {REPORTED}"),
    ("n_negatives", int, f"corruptions per positive {REPORTED}"),
    ("gamma", float, f"score margin; 10 reported, 15 reported for the largest graphs {REPORTED}"),
    ("alpha", float, f"self-adversarial temperature {CHOICE}"),
    ("max_steps", int, f"optimization steps {CHOICE}"),
    ("seed", int, f"master seed for init/sampling {CHOICE}"),
    ("ablation", str, f"encoder variant: full, no_reserved, no_conrel, no_knresent, "
                      f"no_conrel_knresent, no_mulhop {CHOICE}"),
    ("max_neighbors", int, f"per-entity neighbor cap during aggregation, sampled per "
                           f"step; default unlimited {CHOICE}"),
    ("checkpoint_interval", int, f"steps between periodic checkpoints; 0 = final only {CHOICE}"),
    ("checkpoint_dtype", str, f"checkpoint payload dtype: float64 (exact resume) or "
                              f"float32 (compact) {CHOICE}"),
]


def _add_config_flags(parser, names=None):
    for name, typ, help_text in _CONFIG_FLAG_SPECS:
        if names is not None and name not in names:
            continue
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ,
                            default=None, help=help_text)


def _parse_config_file(path: str) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    from .training import TrainConfig

    types = {name: typ for name, typ, _ in _CONFIG_FLAG_SPECS}
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                out[key] = types[key](value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}")
    TrainConfig()  # keep the import meaningful for type alignment
    return out


def _merged_config(args):
    """CLI flag > config file > built-in default."""
    from .training import config_from_dict

    merged = {}
    if getattr(args, "config", None):
        merged.update(_parse_config_file(args.config))
    for name, _, _ in _CONFIG_FLAG_SPECS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    config = config_from_dict(merged)
    config.validate()
    return config, merged


def _explicit_conflicts(merged: dict, bundle) -> None:
    """Reject settings that contradict the prepared bundle's caches."""
    stats = bundle.stats
    if "reserved_fraction" in merged and merged["reserved_fraction"] != bundle.reserved.fraction:
        raise ConfigError(
            f"--reserved-fraction {merged['reserved_fraction']} conflicts with the "
            f"bundle's {bundle.reserved.fraction}; re-run prepare")
    if "reserved_count" in merged and merged["reserved_count"] != bundle.reserved.size:
        raise ConfigError(
            f"--reserved-count {merged['reserved_count']} conflicts with the "
            f"bundle's {bundle.reserved.size}; re-run prepare")
    if "k" in merged and merged["k"] > stats.get("k", merged["k"]):
        raise ConfigError(
            f"--k {merged['k']} exceeds the bundle's cached k={stats.get('k')}; "
            f"re-run prepare with a larger k")


# ---------------------------------------------------------------------------
# subcommands

def cmd_prepare(args) -> int:
    from .bundle import save_bundle
    from .features import KnnIndex, build_relational_features, select_reserved
    from .kg import KnowledgeGraph

    started = _now()
    paths = {name: resolve_data_path(getattr(args, name))
             for name in ("train", "valid", "test")}
    for name, p in paths.items():
        if not os.path.exists(p):
            raise DataError(f"--{name} file not found: {p}")

    kg = KnowledgeGraph.from_files(paths["train"], paths["valid"], paths["test"])
    features = build_relational_features(kg)
    reserved = select_reserved(kg.n_entities, args.reserved_fraction, args.seed)
    knn = KnnIndex.build(features, reserved, args.k)
    stats = save_bundle(args.out, kg, features, reserved, knn, args.k)

    print(f"entities   {stats['entities']}")
    print(f"relations  {stats['relations']}")
    print(f"train      {stats['train']}")
    print(f"valid      {stats['valid']} (+{stats['valid_unseen']} unseen)")
    print(f"test       {stats['test']} (+{stats['test_unseen']} unseen)")
    print(f"reserved   {stats['reserved']}")
    if stats["duplicates_dropped"]:
        print(f"warning: dropped {stats['duplicates_dropped']} duplicate triples")

    outputs = sorted(os.listdir(args.out))
    write_manifest(args.out, "prepare",
                   {"k": args.k, "reserved_fraction": args.reserved_fraction,
                    "seed": args.seed},
                   {p: _sha256(p) for p in paths.values()},
                   args.seed, outputs, started)
    return 0


def _load_bundle_checked(path):
    from .bundle import load_bundle

    return load_bundle(resolve_data_path(path))


def cmd_train(args) -> int:
    from .training import DatasetIndex, train

    started = _now()
    bundle = _load_bundle_checked(args.data)
    config, merged = _merged_config(args)
    _explicit_conflicts(merged, bundle)

    flags = config.flags
    index = DatasetIndex(
        features=bundle.features if (flags.use_conrel or flags.use_knresent) else None,
        reserved=bundle.reserved if flags.use_reserved else None,
        knn=bundle.knn.truncated(config.k) if flags.use_knresent else None,
    )
    os.makedirs(args.out, exist_ok=True)
    checkpoint_stem = os.path.join(args.out, "checkpoint")
    log_path = os.path.join(args.out, "train_log.csv")
    result = train(bundle.kg, config, index=index, checkpoint_stem=checkpoint_stem,
                   resume_from=args.resume, log_path=log_path,
                   progress_every=args.progress,
                   dataset_meta=bundle.stats["fingerprint"])

    print(f"trained {result.steps_done} steps, {result.param_count} parameters")
    if result.losses:
        tail = result.losses[-min(100, len(result.losses)):]
        print(f"final loss (mean of last {len(tail)}): {sum(tail) / len(tail):.6f}")
    print(f"checkpoint: {checkpoint_stem}.json / .bin")
    outputs = ["checkpoint.json", "checkpoint.bin", "train_log.csv"]
    write_manifest(args.out, "train", asdict(config),
                   {args.data: bundle.stats["fingerprint"]["vocab_sha256"]},
                   config.seed, outputs, started)
    return 0


def _rebuild_model(bundle, meta):
    """Model + context from a checkpoint's metadata against a bundle."""
    from .encoder import AblationFlags, EncoderContext, ModelParams
    from .training import config_from_dict

    saved = meta.get("dataset", {})
    current = bundle.stats["fingerprint"]
    if saved and saved.get("vocab_sha256") not in (None, current["vocab_sha256"]):
        raise DataError("checkpoint is incompatible with this bundle "
                        "(vocabulary fingerprints differ)")
    config = config_from_dict(meta["config"])
    flags = AblationFlags.variant(config.ablation)
    reserved = bundle.reserved if flags.use_reserved else None
    knn = bundle.knn.truncated(config.k) if flags.use_knresent else None
    params = ModelParams.init(bundle.kg.n_relations,
                              reserved.size if reserved else 0,
                              config.dim, config.layers, flags, config.seed)
    ctx = EncoderContext(bundle.kg, bundle.features, knn, reserved, flags,
                         config.dim, config.seed)
    return params, ctx, config


def cmd_eval(args) -> int:
    from .evaluation import evaluate_model
    from .serialize import load_checkpoint

    started = _now()
    bundle = _load_bundle_checked(args.data)
    tensors, meta = load_checkpoint(args.checkpoint)
    params, ctx, config = _rebuild_model(bundle, meta)
    for name, t in params.named().items():
        if name not in tensors:
            raise DataError(f"checkpoint is missing tensor {name!r}")
        if tensors[name].shape != t.values.shape:
            raise DataError(f"checkpoint tensor {name!r} shape {tensors[name].shape} "
                            f"does not match the bundle-derived model {t.values.shape}")
        t.values[...] = tensors[name]

    report = evaluate_model(bundle.kg, params, ctx, args.split, asdict(config))
    payload = report.to_dict()
    payload["run_manifest"] = "run_manifest.json"
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    outputs = []
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        outputs.append(os.path.basename(args.out))
        out_dir = os.path.dirname(os.path.abspath(args.out))
        write_manifest(out_dir, "eval", asdict(config),
                       {args.data: bundle.stats["fingerprint"]["vocab_sha256"]},
                       config.seed, outputs, started)
    return 0


def cmd_ablate(args) -> int:
    from .evaluation import ablation_table, run_ablations

    started = _now()
    bundle = _load_bundle_checked(args.data)
    config, merged = _merged_config(args)
    if merged.get("ablation"):
        raise ConfigError("--ablation conflicts with ablate, which runs every variant")
    reports = run_ablations(bundle.kg, config, split=args.split,
                            progress_every=args.progress)

    os.makedirs(args.out, exist_ok=True)
    table = ablation_table(reports)
    print(table)
    with open(os.path.join(args.out, "ablations.json"), "w", encoding="utf-8") as f:
        json.dump({name: r.to_dict() for name, r in reports.items()},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(args.out, "ablations.csv"), "w", encoding="utf-8") as f:
        f.write("variant,param_count,mrr,hits1,hits3,hits10,effi\n")
        for name, r in reports.items():
            f.write(f"{name},{r.param_count},{r.mrr!r},{r.hits[1]!r},"
                    f"{r.hits[3]!r},{r.hits[10]!r},{r.effi!r}\n")
    write_manifest(args.out, "ablate", asdict(config),
                   {args.data: bundle.stats["fingerprint"]["vocab_sha256"]},
                   config.seed, ["ablations.json", "ablations.csv"], started)
    return 0


def _parse_grid(spec: str):
    """'dim:reserved,dim:reserved' -> [(dim, reserved), ...]"""
    grid = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            dim_s, res_s = part.split(":")
            grid.append((int(dim_s), int(res_s)))
        except ValueError:
            raise ConfigError(f"bad grid point {part!r}; expected dim:reserved_count")
    if not grid:
        raise ConfigError("empty sweep grid")
    return grid


def cmd_sweep(args) -> int:
    from .evaluation import budget_sweep

    started = _now()
    bundle = _load_bundle_checked(args.data)
    config, merged = _merged_config(args)
    grid = _parse_grid(args.grid)
    rows, rejected = budget_sweep(bundle.kg, args.budget, grid, config,
                                  tolerance=args.budget_tolerance, split=args.split,
                                  progress_every=args.progress)
    for dim, res, total, message in rejected:
        print(f"rejected dim={dim} reserved={res}: {message}", file=sys.stderr)

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "sweep.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("dim,reserved_count,param_count,mrr\n")
        for dim, res, total, mrr in rows:
            f.write(f"{dim},{res},{total},{mrr!r}\n")
    for dim, res, total, mrr in rows:
        print(f"dim={dim} reserved={res} params={total} mrr={mrr:.4f}")
    write_manifest(args.out, "sweep", asdict(config),
                   {args.data: bundle.stats["fingerprint"]["vocab_sha256"]},
                   config.seed, ["sweep.csv"], started)
    return 0


def cmd_count_params(args) -> int:
    from .encoder import AblationFlags, count_params, count_params_plain_rotate

    if args.data:
        bundle = _load_bundle_checked(args.data)
        n_entities = bundle.stats["entities"]
        n_relations = bundle.stats["relations"]
        default_reserved = bundle.stats["reserved"]
    elif args.dataset:
        key = args.dataset.lower()
        if key not in DATASET_STATS:
            raise ConfigError(f"unknown dataset {args.dataset!r}; "
                              f"choose from {sorted(DATASET_STATS)} or pass "
                              f"--entities/--relations")
        n_entities, n_relations = DATASET_STATS[key]
        default_reserved = int(args.reserved_fraction * n_entities)
    elif args.entities and args.relations:
        n_entities, n_relations = args.entities, args.relations
        default_reserved = int(args.reserved_fraction * n_entities)
    else:
        raise ConfigError("need --data, --dataset, or --entities plus --relations")

    if args.model == "rotate":
        total, breakdown = count_params_plain_rotate(n_entities, n_relations, args.dim)
        print(f"model: plain rotation lookup ({n_entities} entities, "
              f"{n_relations} relations, dim {args.dim})")
    else:
        reserved = args.reserved_count if args.reserved_count else default_reserved
        flags = AblationFlags.variant(args.ablation)
        total, breakdown = count_params(n_relations, reserved, args.dim,
                                        args.layers, flags)
        print(f"model: entity-agnostic encoder ({n_relations} relations, "
              f"{reserved} reserved, dim {args.dim}, {args.layers} layers, "
              f"variant {args.ablation})")
    for name, count in breakdown.items():
        print(f"  {name:<28} {count:>12,}")
    print(f"  {'total':<28} {total:>12,}  ({total / 1e6:.2f}M)")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="earl", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"cap BLAS/OpenMP data parallelism {CHOICE}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="index raw TSV splits into a bundle directory")
    p.add_argument("--train", required=True, help="train split TSV")
    p.add_argument("--valid", required=True, help="validation split TSV")
    p.add_argument("--test", required=True, help="test split TSV")
    p.add_argument("--out", required=True, help="bundle output directory")
    p.add_argument("--k", type=int, default=10,
                   help=f"neighbors cached per entity (default 10) {REPORTED}")
    p.add_argument("--reserved-fraction", type=float, default=0.10,
                   help=f"reserved-entity fraction (default 0.10) {REPORTED}")
    p.add_argument("--seed", type=int, default=0,
                   help=f"reserved-set sampling seed (default 0) {CHOICE}")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model against a prepared bundle")
    p.add_argument("--data", required=True, help="bundle directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", help="key=value config file (CLI flags win)")
    p.add_argument("--resume", help="checkpoint stem to resume from")
    p.add_argument("--progress", type=int, default=0,
                   help="print a windowed loss every N steps (0 = quiet)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank a split with a trained checkpoint")
    p.add_argument("--data", required=True, help="bundle directory")
    p.add_argument("--checkpoint", required=True, help="checkpoint stem")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score every encoder variant")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--progress", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="trade dimension against reserved count "
                                     "under a fixed parameter budget")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, required=True, help="target parameter count")
    p.add_argument("--grid", required=True,
                   help="comma list of dim:reserved_count points")
    p.add_argument("--budget-tolerance", type=float, default=0.05,
                   help=f"max relative deviation from the budget (default 0.05) {CHOICE}")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.add_argument("--progress", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("count-params", help="closed-form parameter count and breakdown")
    p.add_argument("--data", help="bundle directory to take sizes from")
    p.add_argument("--dataset", help=f"benchmark name: {', '.join(sorted(DATASET_STATS))}")
    p.add_argument("--entities", type=int, help="entity count (with --relations)")
    p.add_argument("--relations", type=int, help="relation count (with --entities)")
    p.add_argument("--dim", type=int, required=True, help="complex dimension")
    p.add_argument("--layers", type=int, default=2,
                   help=f"message-passing layers (default 2) {REPORTED}")
    p.add_argument("--reserved-count", type=int, default=None,
                   help=f"reserved-set size; default floor(fraction * entities) {CHOICE}")
    p.add_argument("--reserved-fraction", type=float, default=0.10,
                   help=f"used when --reserved-count is absent (default 0.10) {REPORTED}")
    p.add_argument("--model", choices=("earl", "rotate"), default="earl",
                   help=f"earl = entity-agnostic encoder; rotate = conventional "
                        f"lookup-table baseline {CHOICE}")
    p.add_argument("--ablation", default="full",
                   help=f"encoder variant to count (default full) {CHOICE}")
    p.set_defaults(func=cmd_count_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError(f"--threads must be >= 1, got {args.threads}")
            try:
                from threadpoolctl import threadpool_limits

                threadpool_limits(limits=args.threads)
            except ImportError:
                os.environ["OMP_NUM_THREADS"] = str(args.threads)
                os.environ["OPENBLAS_NUM_THREADS"] = str(args.threads)
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except EarlError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
