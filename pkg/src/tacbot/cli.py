"""Command-line entry point.

Subcommands: gen-map-template, gen-data, train, rollout, eval, bench,
render-heatmap. Every run writes a resolved-config echo into the output
directory for reproducibility. Exit codes: 0 success, 2 usage errors
(argparse), 1 runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics, net, policy, train as train_mod, trajio
from .worldmap import MAP_TEMPLATE, MapGeometry, builtin_map, load_map_file


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _load_geometry(spec: str) -> MapGeometry:
    path = Path(spec)
    if path.exists():
        return load_map_file(path)
    return builtin_map(spec)


def _echo_config(out_dir: Path, command: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{command}_config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_roster(spec: str | None, style: str, seed: int):
    if spec is None:
        return [policy.ExpertProfile(style=style, seed=seed + pid)
                for pid in range(4)]
    with open(spec, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or len(entries) != 4:
        raise ValueError("roster file must hold a list of 4 profiles")
    return [policy.ExpertProfile(**entry) for entry in entries]


def cmd_gen_map_template(args) -> int:
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(MAP_TEMPLATE, encoding="utf-8")
    print(f"wrote map template to {path}")
    return 0


def cmd_gen_data(args) -> int:
    geometry = _load_geometry(args.map)
    roster = _parse_roster(args.roster, args.style, args.seed)
    out = Path(args.out)
    dataset = policy.generate_dataset(
        geometry, roster, n_matches=args.matches,
        rounds_per_match=args.rounds, seed=args.seed,
        min_total_seconds=args.min_seconds,
        log=print if args.verbose else None)
    trajio.write_dataset(dataset, out)
    _echo_config(out, "gen-data", {
        "map": args.map, "matches": args.matches, "rounds": args.rounds,
        "seed": args.seed, "style": args.style,
        "min_seconds": args.min_seconds,
        "roster": [p.to_dict() for p in roster],
    })
    m = dataset.manifest
    print(f"dataset: {m['total_rounds']} rounds, "
          f"{m['total_timesteps']} timesteps, "
          f"{m['total_sim_seconds']:.0f} s simulated -> {out}")
    return 0


def cmd_train(args) -> int:
    dataset = trajio.read_dataset(args.data)
    net_config = net.preset(args.preset)
    overrides = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    train_config = train_mod.TrainConfig.from_dict(overrides)
    start_epoch = 0
    initial_params = None
    if args.resume:
        resumed, meta = net.load_checkpoint(args.resume)
        if resumed.config != net_config:
            raise ValueError("resume checkpoint preset differs from --preset")
        start_epoch = int(meta.get("extra", {}).get("epochs_trained", 0))
        initial_params = resumed.params

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, "train", {
        "data": str(args.data), "preset": args.preset,
        "train_config": {k: getattr(train_config, k)
                         for k in train_config.__dataclass_fields__},
        "net_config": net_config.to_dict(),
        "resume": args.resume,
    })

    network, report = train_mod.bc_train(
        dataset.trajectories, net_config, train_config, log=print,
        initial_params=initial_params)
    if start_epoch:
        for row in report.epochs:
            row.epoch += start_epoch
        report.best_epoch += start_epoch

    ckpt_path = out / "checkpoint.npz"
    tmp_path = out / "checkpoint.npz.tmp"
    net.save_checkpoint(
        tmp_path, network, seed=train_config.seed,
        extra={"epochs_trained": start_epoch + train_config.epochs,
               "best_epoch": report.best_epoch})
    tmp_path.replace(ckpt_path)
    with open(out / "train_report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"best held-out loss {report.best_heldout_loss:.4f} "
          f"at epoch {report.best_epoch}; checkpoint -> {ckpt_path}")
    return 0


def cmd_rollout(args) -> int:
    network, _ = net.load_checkpoint(args.ckpt)
    geometry = _load_geometry(args.map)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logs, trajectories, results = policy.model_rollout(
        network, geometry, n_rounds=args.rounds,
        temperature=args.temperature, seed=args.seed,
        record_obs=args.record_obs)
    (out / "logs").mkdir(exist_ok=True)
    for i, records in enumerate(logs):
        trajio.write_match_log(out / "logs" / f"round_{i:04d}.jsonl", records)
    if args.record_obs:
        (out / "trajectories").mkdir(exist_ok=True)
        for t in trajectories:
            trajio.write_trajectory(
                out / "trajectories" / trajio.traj_filename(t), t)
    _echo_config(out, "rollout", {
        "ckpt": str(args.ckpt), "map": args.map, "rounds": args.rounds,
        "temperature": args.temperature, "seed": args.seed,
        "record_obs": args.record_obs,
    })
    outcomes = [r.outcome.value for r in results]
    print(f"{len(results)} rounds: "
          f"{outcomes.count('attackers_win')} attacker wins, "
          f"{outcomes.count('defenders_win')} defender wins -> {out}")
    return 0


def _side_values(features, side: str, feature: str):
    return [f.value(feature) for f in features if f.side == side]


def _js_rows(expert_feats, subject_feats):
    rows = []
    for side, names in (("attack", metrics.FEATURES_ATTACK),
                        ("defence", metrics.FEATURES_DEFENCE)):
        for feature in names:
            a = _side_values(expert_feats, side, feature)
            b = _side_values(subject_feats, side, feature)
            if not a or not b:
                continue
            width, origin = metrics.bucket_spec(feature)
            ha, hb = metrics.histogram_pair(a, b, width, origin)
            rows.append({"side": side, "feature": feature,
                         "js": metrics.js(ha, hb)})
    return rows


def _format_js_table(rows, subject_name: str) -> str:
    lines = [f"Jensen-Shannon divergence vs expert data ({subject_name})"]
    for side in ("attack", "defence"):
        lines.append(f"--- {side.upper()} ---")
        lines.append(f"{'feature':<18}{'js':>10}")
        for row in rows:
            if row["side"] == side:
                lines.append(f"{row['feature']:<18}{row['js']:>10.4f}")
    return "\n".join(lines)


def cmd_eval(args) -> int:
    expert_records = list(trajio.iter_dataset_logs(args.expert))
    subject_root = Path(args.subject)
    if (subject_root / "manifest.json").exists():
        subject_records = list(trajio.iter_dataset_logs(subject_root))
    else:
        subject_records = []
        for log_path in sorted(subject_root.glob("logs/*.jsonl")):
            subject_records.extend(trajio.read_match_log(log_path))
    if not subject_records:
        raise ValueError(f"no match logs found under {subject_root}")

    expert_feats = metrics.extract_features(expert_records)
    subject_feats = metrics.extract_features(subject_records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = _js_rows(expert_feats, subject_feats)
    with open(out / "js_divergence.csv", "w", encoding="utf-8") as fh:
        fh.write("side,feature,js\n")
        for row in rows:
            fh.write(f"{row['side']},{row['feature']},{row['js']:.6f}\n")
    table = _format_js_table(rows, subject_root.name)
    (out / "js_divergence.txt").write_text(table + "\n", encoding="utf-8")
    print(table)

    heat_rows = []
    for side in ("attack", "defence"):
        he = metrics.build_heatmap(expert_records, side,
                                   cell_size=args.cell_size)
        hs = metrics.build_heatmap(subject_records, side, bounds=(
            he.origin[0], he.origin[1],
            he.origin[0] + he.grid.shape[1] * he.cell_size,
            he.origin[1] + he.grid.shape[0] * he.cell_size),
            cell_size=he.cell_size)
        metrics.render_heatmap(he, out / f"heatmap_expert_{side}.png")
        metrics.render_heatmap(hs, out / f"heatmap_subject_{side}.png")
        heat_rows.append({
            "side": side,
            "emd_1d_no_location": metrics.emd_1d_no_location(he, hs),
            "emd_2d_euclidean": metrics.emd_2d(he, hs),
            "asd": metrics.asd(he, hs),
        })
    with open(out / "heatmap_distances.csv", "w", encoding="utf-8") as fh:
        fh.write("side,emd_1d_no_location,emd_2d_euclidean,asd\n")
        for row in heat_rows:
            fh.write(f"{row['side']},{row['emd_1d_no_location']:.6f},"
                     f"{row['emd_2d_euclidean']:.6f},{row['asd']:.6f}\n")
    for row in heat_rows:
        print(f"{row['side']}: EMD-1D {row['emd_1d_no_location']:.3f}  "
              f"EMD-2D {row['emd_2d_euclidean']:.3f}  ASD {row['asd']:.3f}")

    _echo_config(out, "eval", {
        "expert": str(args.expert), "subject": str(args.subject),
        "cell_size": args.cell_size,
    })
    return 0


def cmd_bench(args) -> int:
    names = [n.strip() for n in args.presets.split(",") if n.strip()]
    results = []
    for name in names:
        config = net.preset(name)
        result = metrics.bench_inference(config, n_warmup=args.warmup,
                                         n_iters=args.iters, seed=args.seed)
        result["model"] = name
        results.append(result)
        print(f"{name}: {result['params']:>10,} params  "
              f"{result['mean_ms']:6.2f} +/- {result['std_ms']:.2f} ms")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w", encoding="utf-8") as fh:
            fh.write("model,parameters,mean_ms,std_ms,n_iters,machine\n")
            for r in results:
                fh.write(f"{r['model']},{r['params']},{r['mean_ms']:.4f},"
                         f"{r['std_ms']:.4f},{r['n_iters']},"
                         f"\"{r['machine']}\"\n")
        _echo_config(out, "bench", {
            "presets": names, "iters": args.iters, "warmup": args.warmup,
            "seed": args.seed,
        })
    return 0


def cmd_render_heatmap(args) -> int:
    path = Path(args.logs)
    if path.is_dir():
        if (path / "manifest.json").exists():
            records = list(trajio.iter_dataset_logs(path))
        else:
            records = []
            for log_path in sorted(path.glob("**/*.jsonl")):
                records.extend(trajio.read_match_log(log_path))
    else:
        records = trajio.read_match_log(path)
    if not records:
        raise ValueError(f"no log records found at {path}")
    heatmap = metrics.build_heatmap(records, args.side,
                                    cell_size=args.cell_size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.render_heatmap(heatmap, out, scale=args.scale)
    print(f"wrote {args.side} heatmap ({heatmap.grid.shape[1]}x"
          f"{heatmap.grid.shape[0]} cells) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tacbot",
        description="Desk-scale tactical-shooter bot pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-map-template", help="write an editable map file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_map_template)

    p = sub.add_parser("gen-data", help="generate scripted-expert matches")
    p.add_argument("--map", default="ascent_mini",
                   help="map file path or built-in name")
    p.add_argument("--matches", type=_positive_int, required=True)
    p.add_argument("--rounds", type=_positive_int, default=8,
                   help="rounds per match")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--style", choices=("match", "tracker"), default="match")
    p.add_argument("--roster", help="JSON file with 4 expert profiles")
    p.add_argument("--min-seconds", type=float, default=None,
                   help="extend with extra matches until this much sim time")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="behavior-clone a model from a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--preset", default="A-small",
                   choices=sorted(net.PRESETS))
    p.add_argument("--epochs", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="JSON TrainConfig overrides")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="self-play a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--map", default="ascent_mini")
    p.add_argument("--rounds", type=_positive_int, default=8)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--record-obs", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="distribution similarity vs expert data")
    p.add_argument("--expert", required=True, help="expert dataset directory")
    p.add_argument("--subject", required=True,
                   help="dataset or rollout directory to compare")
    p.add_argument("--cell-size", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="CPU inference latency")
    p.add_argument("--presets", default="A,B,C,D")
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render-heatmap", help="PNG heatmap from match logs")
    p.add_argument("--logs", required=True,
                   help="log file, logs directory, or dataset directory")
    p.add_argument("--side", choices=("attack", "defence"), default="attack")
    p.add_argument("--cell-size", type=float, default=None)
    p.add_argument("--scale", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_heatmap)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"tacbot: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:   # runtime errors exit 1, not a traceback
        print(f"tacbot: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
