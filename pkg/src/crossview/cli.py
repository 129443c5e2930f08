"""Command-line pipeline orchestration.

Subcommands cover the full flow: synth / aggregate -> align -> search ->
evaluate, plus heatmap export and the alpha-sweep ablation. Every command
validates inputs, writes outputs atomically, embeds the effective config
snapshot and input content hashes into its outputs, and exits with a
machine-parsable one-line error on failure:

    exit 2  bad arguments
    exit 3  data validation failure
    exit 4  numerical failure
    exit 5  IO failure
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import aggregation, alignment, evaluation, retrieval, synth
from .config import PipelineConfig, load_config
from .descriptors import DescriptorSet, load_descriptor_set, save_descriptor_set
from .errors import DataValidationError, NumericalError
from .evaluation import EvalReport, format_table, ground_truth_from_sets
from .feature_store import Domain, load_dataset, read_feature_map
from .ioutil import atomic_write_text

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_BAD_ARGS = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


def _sha256(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"sha256:{digest}"


def _meta(config: PipelineConfig, inputs: dict[str, str | Path], **extra) -> dict:
    meta = {
        "config": config.to_dict(),
        "inputs": {name: _sha256(p) for name, p in sorted(inputs.items())},
    }
    meta.update(extra)
    return meta


def _load_domain_set(path: str, domain: Domain) -> DescriptorSet:
    dset = load_descriptor_set(path).by_domain(domain)
    if len(dset) == 0:
        raise DataValidationError(f"{path}: no {domain.value} descriptors")
    return dset


def _alphas_arg(text: str) -> list[float]:
    text = text.strip()
    try:
        if ".." in text:
            lo_s, hi_s = text.split("..", 1)
            lo, hi = int(lo_s), int(hi_s)
            if hi < lo:
                raise ValueError
            return [float(a) for a in range(lo, hi + 1)]
        alphas = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'LO..HI' or a comma list, got '{text}'"
        ) from None
    if not alphas:
        raise argparse.ArgumentTypeError("alphas must be non-empty")
    return alphas


def _size_arg(text: str) -> tuple[int, int]:
    try:
        h_s, w_s = text.lower().split("x", 1)
        return int(h_s), int(w_s)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected HxW, got '{text}'"
        ) from None


def _topk_arg(text: str):
    if text == "all":
        return "all"
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected an integer or 'all', got '{text}'"
        ) from None
    if k < 1:
        raise argparse.ArgumentTypeError("topk must be >= 1")
    return k


def _ks_arg(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected a comma-separated integer list, got '{text}'"
        ) from None
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("ks must be positive integers")
    return ks


# ---------------------------------------------------------------- commands


def cmd_aggregate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    manifest = load_dataset(args.manifest)
    threads = max(1, args.threads)

    def build(entry):
        return aggregation.aggregate(manifest.load_map(entry), config.aggregation)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(build, manifest.entries))
    else:
        entries = [build(e) for e in manifest.entries]
    dset = DescriptorSet(entries=entries, dataset_name=manifest.dataset_name)
    meta = _meta(config, {"manifest": args.manifest}, dataset_name=manifest.dataset_name)
    save_descriptor_set(dset, args.out, meta=meta)
    print(f"aggregated {len(dset)} descriptors -> {args.out}")
    return 0


def cmd_align(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    drone = _load_domain_set(args.drone_set, Domain.DRONE)
    sat = _load_domain_set(args.sat_set, Domain.SATELLITE)
    model = alignment.fit_alignment(
        drone,
        sat,
        d=config.align_dim,
        pairing=config.pairing,
        variance_threshold=config.align_variance_threshold,
        strict_rotation=config.strict_rotation,
    )
    alignment.save_model(model, args.out)
    flag = " (degenerate)" if model.degenerate else ""
    print(f"fitted alignment d={model.d} on {len(drone)}+{len(sat)} descriptors{flag} -> {args.out}")
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    query_domain = Domain(args.query_domain)
    gallery_domain = (
        Domain.SATELLITE if query_domain is Domain.DRONE else Domain.DRONE
    )
    queries = _load_domain_set(args.query_set, query_domain)
    gallery = _load_domain_set(args.gallery_set, gallery_domain)
    if args.mode != "raw" and args.model is None:
        raise DataValidationError(f"mode '{args.mode}' requires --model")
    if args.mode == "raw":
        q_vecs, g_vecs = queries.matrix(), gallery.matrix()
    else:
        model = alignment.load_model(args.model)
        drone_side = queries if query_domain is Domain.DRONE else gallery
        sat_side = gallery if query_domain is Domain.DRONE else queries
        alignment.check_set_hash(model, [drone_side, sat_side])
        rotate = args.mode == "full"
        q_vecs = alignment.align_set(model, queries, rotate=rotate)
        g_vecs = alignment.align_set(model, gallery, rotate=rotate)
    k = len(gallery) if args.topk == "all" else args.topk
    results = retrieval.search(
        queries.ids(), q_vecs, gallery.ids(), g_vecs, k, threads=max(1, args.threads)
    )
    inputs = {"queries": args.query_set, "gallery": args.gallery_set}
    if args.model is not None:
        inputs["model"] = args.model
    meta = _meta(config, inputs, mode=args.mode, k=k)
    retrieval.save_results(results, args.out, meta=meta)
    print(f"searched {len(results)} queries over {len(gallery)} gallery items -> {args.out}")
    return 0


def _ground_truth_from_manifest(results, manifest):
    by_id = {e.image_id: e for e in manifest.entries}
    gallery_sizes = {len(r.hits) for r in results}
    if len(gallery_sizes) != 1:
        raise DataValidationError(
            f"results have inconsistent ranking depths {sorted(gallery_sizes)}"
        )
    gallery_ids = [h.gallery_id for h in results[0].hits]
    for gid in gallery_ids:
        if gid not in by_id:
            raise DataValidationError(f"gallery id '{gid}' not in manifest")
    gallery_by_loc: dict[str, set[str]] = {}
    for gid in gallery_ids:
        gallery_by_loc.setdefault(by_id[gid].location_id, set()).add(gid)
    relevant = {}
    for r in results:
        entry = by_id.get(r.query_id)
        if entry is None:
            raise DataValidationError(f"unknown query_id '{r.query_id}'")
        rel = gallery_by_loc.get(entry.location_id)
        if not rel:
            raise DataValidationError(
                f"query '{r.query_id}' has no relevant gallery item"
            )
        relevant[r.query_id] = frozenset(rel)
    return evaluation.GroundTruth(relevant=relevant), len(gallery_ids)


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    results = retrieval.load_results(args.results)
    if not results:
        raise DataValidationError(f"{args.results}: no results")
    manifest = load_dataset(args.manifest)
    gt, gallery_size = _ground_truth_from_manifest(results, manifest)
    ks = args.ks if args.ks else list(config.retrieval_ks)
    snapshot = _meta(config, {"results": args.results, "manifest": args.manifest})
    report = evaluation.evaluate(results, gt, ks, gallery_size, config=snapshot)
    payload = json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    atomic_write_text(args.out, payload)
    if args.json:
        print(payload, end="")
    else:
        print(evaluation.report_table("retrieval", report))
    return 0


_SYNTH_KEYS = {
    "num_locations",
    "views_per_location_drone",
    "latent_dim",
    "ambient_dim",
    "domain_rotation_angle_scale",
    "domain_offset_norm",
    "noise_sigma",
    "seed",
    "location_jitter_angle",
    "shared_domain_map",
}


def load_synth_spec(path: str | Path | None, seed: int | None = None) -> synth.SynthSpec:
    doc = {}
    if path is not None:
        try:
            doc = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise DataValidationError(f"{path}: invalid TOML ({exc})") from exc
        unknown = set(doc) - _SYNTH_KEYS
        if unknown:
            raise DataValidationError(f"unknown synth spec key(s): {sorted(unknown)}")
    if seed is not None:
        doc["seed"] = seed
    return synth.SynthSpec(**doc)


def cmd_synth(args: argparse.Namespace) -> int:
    spec = load_synth_spec(args.spec, args.seed)
    config = load_config(args.config)
    inputs = {"spec": args.spec} if args.spec else {}
    meta = _meta(config, inputs, synth_spec=dataclasses.asdict(spec))
    paths = synth.emit(spec, args.out, meta=meta)
    print(
        f"generated {spec.num_locations} locations "
        f"({spec.views_per_location_drone} drone views each) -> {paths['manifest'].parent}"
    )
    return 0


def cmd_heatmap(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model = alignment.load_model(args.model)
    fmap = read_feature_map(args.tensor, image_id=Path(args.tensor).stem)
    gallery = load_descriptor_set(args.gallery_set)
    match = [d for d in gallery if d.image_id == args.gallery_id]
    if not match:
        raise DataValidationError(
            f"gallery id '{args.gallery_id}' not found in {args.gallery_set}"
        )
    upsample = args.upsample
    heatmap = retrieval.similarity_heatmap(fmap, match[0], model, upsample_to=upsample)
    inputs = {"tensor": args.tensor, "gallery": args.gallery_set, "model": args.model}
    comment = json.dumps(_meta(config, inputs), sort_keys=True)
    pgm = Path(str(args.out) + ".pgm")
    csv = Path(str(args.out) + ".csv")
    retrieval.write_heatmap_pgm(heatmap, pgm, comment=comment)
    retrieval.write_heatmap_csv(heatmap, csv, comment=comment)
    print(f"heatmap {heatmap.query_id} vs {heatmap.gallery_id} -> {pgm}, {csv}")
    return 0


def _evaluate_direction(
    queries: DescriptorSet,
    gallery: DescriptorSet,
    config: PipelineConfig,
    snapshot: dict,
) -> EvalReport:
    model = alignment.fit_alignment(
        queries if queries.entries[0].domain is Domain.DRONE else gallery,
        gallery if queries.entries[0].domain is Domain.DRONE else queries,
        d=config.align_dim,
        pairing=config.pairing,
        variance_threshold=config.align_variance_threshold,
        strict_rotation=config.strict_rotation,
    )
    q_vecs = alignment.align_set(model, queries)
    g_vecs = alignment.align_set(model, gallery)
    results = retrieval.search(queries.ids(), q_vecs, gallery.ids(), g_vecs, len(gallery))
    gt = ground_truth_from_sets(queries, gallery)
    return evaluation.evaluate(
        results, gt, list(config.retrieval_ks), len(gallery), config=snapshot
    )


def cmd_sweep_alpha(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    alphas = args.alphas
    manifest = load_dataset(args.manifest)
    per_alpha = aggregation.sweep_alpha(
        manifest.iter_maps(), config.aggregation, alphas
    )
    snapshot = _meta(config, {"manifest": args.manifest})
    rows = []
    report_rows = []
    for alpha in alphas:
        dset = DescriptorSet(entries=per_alpha[float(alpha)], dataset_name=manifest.dataset_name)
        drone = dset.by_domain(Domain.DRONE)
        sat = dset.by_domain(Domain.SATELLITE)
        d2s = _evaluate_direction(drone, sat, config, snapshot)
        s2d = _evaluate_direction(sat, drone, config, snapshot)
        report_rows.append(
            {
                "alpha": alpha,
                "drone_to_satellite": d2s.to_json_dict(),
                "satellite_to_drone": s2d.to_json_dict(),
            }
        )
        ks = sorted(d2s.recall_at)
        rows.append(
            [f"{alpha:g}"]
            + [f"{d2s.recall_at[k]:.2f}" for k in ks]
            + [f"{d2s.recall_top1pct:.2f}", f"{d2s.ap_mean:.2f}"]
            + [f"{s2d.recall_at[k]:.2f}" for k in ks]
            + [f"{s2d.recall_top1pct:.2f}", f"{s2d.ap_mean:.2f}"]
        )
    payload = json.dumps(
        {"config": snapshot, "rows": report_rows}, indent=2, sort_keys=True
    ) + "\n"
    atomic_write_text(args.out, payload)
    if args.json:
        print(payload, end="")
    else:
        ks = sorted(config.retrieval_ks)
        metric_cols = [f"R@{k}" for k in ks] + ["R@top1", "AP"]
        header = ["alpha"] + metric_cols + metric_cols
        table = format_table(header, rows)
        width = len(table.splitlines()[0])
        half = (width - 7) // 2
        print(" " * 7 + "drone->satellite".center(half)
              + "satellite->drone".center(width - 7 - half))
        print(table)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossview",
        description="Training-free cross-view geo-localization pipeline",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="pipeline config TOML")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--seed", type=int, default=None, help="RNG seed override")
    common.add_argument("--json", action="store_true", help="emit JSON instead of tables")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", parents=[common],
                       help="feature maps -> descriptor set")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("align", parents=[common],
                       help="fit and save the alignment model")
    p.add_argument("drone_set")
    p.add_argument("sat_set")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("search", parents=[common], help="ranked cosine retrieval")
    p.add_argument("query_set")
    p.add_argument("gallery_set")
    p.add_argument("--model", default=None)
    p.add_argument("--topk", type=_topk_arg, default="all",
                   help="hits per query, or 'all'")
    p.add_argument("--mode", choices=["full", "pca_only", "raw"], default="full")
    p.add_argument("--query-domain", choices=["drone", "satellite"], default="drone")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", parents=[common], help="metrics report")
    p.add_argument("results")
    p.add_argument("manifest")
    p.add_argument("--ks", type=_ks_arg, default=None,
                   help="comma-separated recall cutoffs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark")
    p.add_argument("--spec", default=None, help="synth spec TOML")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("heatmap", parents=[common], help="patch similarity heatmap")
    p.add_argument("tensor")
    p.add_argument("gallery_set")
    p.add_argument("--model", required=True)
    p.add_argument("--gallery-id", required=True)
    p.add_argument("--upsample", type=_size_arg, default=None, help="output size HxW")
    p.add_argument("--out", required=True, help="output prefix (.pgm/.csv added)")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("sweep-alpha", parents=[common],
                       help="decay-factor ablation table")
    p.add_argument("manifest")
    p.add_argument("--alphas", type=_alphas_arg, default=[float(a) for a in range(1, 10)],
                   help="range 'LO..HI' or comma list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_alpha)
    return parser


def _fail(code: int, exc: BaseException) -> int:
    message = " ".join(str(exc).split())
    print(f"crossview: error code={code} message={message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataValidationError as exc:
        return _fail(EXIT_DATA, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
