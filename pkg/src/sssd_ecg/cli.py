"""Command-line entry points for reproducible experiments.

Subcommands: make-toy, train, generate, synth-copy, evaluate, beatplot,
interpolate, leadcheck. Every run writes `config.resolved.json` into its
output directory with the full set of effective options, sufficient to
reproduce the run bit-for-bit via `--config`.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import analysis, data, diffusion, evaluate, gan, leads, model, training

# Module-namespace config keys accepted in JSON config files.
CONFIG_KEYS = {
    "diffusion.T": 200,
    "diffusion.beta_start": 0.0001,
    "diffusion.beta_end": 0.02,
    "s4.N": 64,
    "s4.dt_min": 1e-3,
    "s4.dt_max": 1e-1,
    "s4.bidirectional": True,
    "model.n_residual_layers": 36,
    "model.residual_channels": 256,
    "model.lr": 2e-4,
    "model.batch_size": 4,
    "eval.epochs": 100,
    "eval.batch_size": 64,
    "eval.crop_length": 250,
    "eval.tta_crops": 7,
    "eval.tta_stride": 125,
    "toy.n_records": 1000,
    "toy.n_labels": 4,
    "toy.length": 1000,
}

# Desk-scale overrides: reduced network, shorter diffusion chain with a
# rescaled terminal beta so that x_T is still close to pure noise.
DESK_OVERRIDES = {
    "diffusion.T": 50,
    "diffusion.beta_end": 0.2,
    "s4.N": 16,
    "model.n_residual_layers": 2,
    "model.residual_channels": 64,
    "model.lr": 2e-3,
    "model.batch_size": 8,
    "eval.epochs": 20,
}


def resolve_data_path(path: str) -> Path:
    """Relative dataset paths resolve under SSSD_ECG_CACHE when it is set."""
    p = Path(path)
    cache = os.environ.get("SSSD_ECG_CACHE")
    if cache and not p.is_absolute() and not p.exists():
        candidate = Path(cache) / p
        if candidate.exists():
            return candidate
    return p


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    unknown = set(cfg) - set(CONFIG_KEYS) - {"args"}
    if unknown:
        raise ValueError(f"schema violation: unknown config keys {sorted(unknown)}")
    return cfg


def resolve_config(args: argparse.Namespace, arg_names: list[str]) -> dict:
    """Merge defaults <- config file <- desk profile; echo CLI arguments."""
    resolved = dict(CONFIG_KEYS)
    file_cfg = load_config_file(getattr(args, "config", None))
    file_args = file_cfg.pop("args", {})
    resolved.update(file_cfg)
    if getattr(args, "desk_scale", False):
        resolved.update(DESK_OVERRIDES)
    echo = {}
    for name in arg_names:
        value = getattr(args, name)
        if value is None and name in file_args:
            value = file_args[name]
            setattr(args, name, value)
        echo[name] = value
    if "seed" in arg_names and getattr(args, "seed", None) is None:
        args.seed = 0
        echo["seed"] = 0
    resolved["args"] = echo
    return resolved


def write_resolved(resolved: dict, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved.json").write_text(
        json.dumps(resolved, indent=1, sort_keys=True))


def model_config_from(resolved: dict, n_labels: int,
                      length: int) -> model.SssdEcgConfig:
    return model.SssdEcgConfig(
        n_residual_layers=int(resolved["model.n_residual_layers"]),
        residual_channels=int(resolved["model.residual_channels"]),
        skip_channels=int(resolved["model.residual_channels"]),
        n_labels=n_labels, length=length,
        label_embed_dim=int(resolved["model.residual_channels"]),
        s4_state_dim=int(resolved["s4.N"]),
        s4_bidirectional=bool(resolved["s4.bidirectional"]),
        lr=float(resolved["model.lr"]),
        batch_size=int(resolved["model.batch_size"]),
    )


def schedule_from(resolved: dict) -> diffusion.NoiseSchedule:
    return diffusion.build_schedule(int(resolved["diffusion.T"]),
                                    float(resolved["diffusion.beta_start"]),
                                    float(resolved["diffusion.beta_end"]))


def classifier_config_from(resolved: dict,
                           desk: bool) -> evaluate.ClassifierConfig:
    cfg = evaluate.ClassifierConfig.desk() if desk else evaluate.ClassifierConfig()
    cfg.epochs = int(resolved["eval.epochs"])
    cfg.batch_size = int(resolved["eval.batch_size"])
    cfg.crop_length = int(resolved["eval.crop_length"])
    cfg.tta_crops = int(resolved["eval.tta_crops"])
    cfg.tta_stride = int(resolved["eval.tta_stride"])
    return cfg


def rebuild_model(checkpoint: str):
    """Instantiate the trained network recorded in a checkpoint sidecar."""
    state, sidecar = model.load_checkpoint(checkpoint)
    kind = sidecar["model_kind"]
    vocab = data.LabelVocabulary(sidecar["vocabulary"])
    if kind == "sssd-ecg":
        cfg_dict = dict(sidecar["config"])
        cfg_dict["diffusion_embed_dims"] = tuple(cfg_dict["diffusion_embed_dims"])
        cfg = model.SssdEcgConfig(**cfg_dict)
        net = model.SssdEcg(cfg)
        sched = diffusion.build_schedule(**sidecar["schedule"])
    elif kind == "wavegan":
        cfg = gan.WaveGanConfig(**sidecar["config"])
        net = gan.WaveGanGenerator(cfg)
        sched = None
    elif kind == "pulse2pulse":
        cfg = gan.Pulse2PulseConfig(**sidecar["config"])
        net = gan.Pulse2PulseGenerator(cfg)
        sched = None
    else:
        raise ValueError(f"unknown model kind: {kind}")
    net.load_state_dict(state)
    net.eval()
    return net, kind, vocab, sched, cfg


def parse_codes(raw: str) -> list[str]:
    return [c.strip() for c in raw.split(",") if c.strip()]


# ---------------------------------------------------------------------------
# Subcommand implementations


def cmd_make_toy(args) -> int:
    resolved = resolve_config(args, ["out", "n", "labels", "length", "seed"])
    ds = data.make_toy_corpus(args.n, args.labels, args.length, args.seed)
    data.save_dataset(ds, args.out)
    write_resolved(resolved, args.out)
    print(f"wrote toy corpus ({args.n} records, {args.labels} labels) to {args.out}")
    return 0


def cmd_train(args) -> int:
    resolved = resolve_config(
        args, ["data", "model", "out", "steps", "seed", "desk_scale"])
    ds = data.load_dataset(resolve_data_path(args.data))
    train_set = ds.split("train")
    length = train_set.records[0].signal.shape[0]
    out = Path(args.out)
    torch.manual_seed(args.seed)
    if args.model == "sssd-ecg":
        cfg = model_config_from(resolved, len(ds.vocabulary), length)
        sched = schedule_from(resolved)
        net = model.SssdEcg(cfg)
        curve = training.train_sssd(net, train_set, sched, steps=args.steps,
                                    seed=args.seed)
        model.save_checkpoint(out / "checkpoint.pt", net, cfg, sched,
                              ds.vocabulary, model_kind="sssd-ecg")
        curves = {"loss": curve}
    else:
        if args.model == "wavegan":
            gcfg = gan.WaveGanConfig.desk(len(ds.vocabulary)) \
                if args.desk_scale else gan.WaveGanConfig(n_labels=len(ds.vocabulary))
        else:
            gcfg = gan.Pulse2PulseConfig.desk(len(ds.vocabulary)) \
                if args.desk_scale else gan.Pulse2PulseConfig(n_labels=len(ds.vocabulary))
        gcfg.length = length
        net, disc = training.build_gan(args.model, gcfg)
        curves = training.train_gan(net, disc, train_set, steps=args.steps,
                                    seed=args.seed)
        model.save_checkpoint(out / "checkpoint.pt", net, gcfg, None,
                              ds.vocabulary, model_kind=args.model)
    (out / "training_curve.json").write_text(json.dumps(curves))
    write_resolved(resolved, out)
    print(f"trained {args.model} for {args.steps} steps; checkpoint in {out}")
    return 0


def _generate(net, kind, vocab, sched, cfg, labels, seed, folds=None):
    if kind == "sssd-ecg":
        return model.generate_dataset_copy(net, labels, sched, seed, vocab,
                                           length=cfg.length, folds=folds)
    return training.gan_generate_copy(net, labels, seed, vocab, folds=folds)


def cmd_generate(args) -> int:
    resolved = resolve_config(args, ["checkpoint", "labels", "n", "seed", "out"])
    net, kind, vocab, sched, cfg = rebuild_model(args.checkpoint)
    codes = parse_codes(args.labels)
    vec = data.encode_labels(codes, vocab)
    ds = _generate(net, kind, vocab, sched, cfg, [vec] * args.n, args.seed)
    data.save_dataset(ds, Path(args.out) / "dataset")
    write_resolved(resolved, args.out)
    print(f"generated {args.n} records conditioned on {codes} in {args.out}")
    return 0


def cmd_synth_copy(args) -> int:
    resolved = resolve_config(args, ["checkpoint", "data", "out", "seed"])
    net, kind, vocab, sched, cfg = rebuild_model(args.checkpoint)
    real = data.load_dataset(resolve_data_path(args.data))
    if real.vocabulary.codes != vocab.codes:
        raise ValueError("incompatible datasets: vocabulary mismatch")
    folds = [r.fold for r in real.records]
    ds = _generate(net, kind, vocab, sched, cfg, real.labels, args.seed,
                   folds=folds)
    data.save_dataset(ds, Path(args.out) / "dataset")
    write_resolved(resolved, args.out)
    print(f"synthetic copy of {len(real)} records written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    resolved = resolve_config(args, ["real", "synth", "out", "seed",
                                     "desk_scale"])
    real = data.load_dataset(resolve_data_path(args.real))
    synth = data.load_dataset(resolve_data_path(args.synth))
    cfg = classifier_config_from(resolved, args.desk_scale)
    table = evaluate.three_way_protocol(real, synth, cfg, seed=args.seed)
    evaluate.write_metrics(table, args.out, extra={"config": resolved})
    write_resolved(resolved, args.out)
    _metric_figure(table, Path(args.out) / "metrics.png")
    print(json.dumps({k: getattr(table, k) for k in
                      ("real_real", "real_synth", "synth_real", "synth_synth")},
                     indent=1))
    return 0


def _metric_figure(table, out_path: Path) -> None:
    import matplotlib.pyplot as plt
    cells = [("real->real", table.real_real), ("real->synth", table.real_synth),
             ("synth->real", table.synth_real), ("synth->synth", table.synth_synth)]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar([c[0] for c in cells], [c[1] for c in cells], color="tab:blue")
    ax.set_ylim(0, 1)
    ax.set_ylabel("macro AUROC")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def cmd_beatplot(args) -> int:
    resolved = resolve_config(args, ["data", "leads", "out", "max_records",
                                     "peak_lead"])
    lead_names = parse_codes(args.leads)
    bands: dict[str, dict] = {}
    for spec_item in args.data:
        name, _, path = spec_item.partition("=")
        if not path:
            name, path = Path(spec_item).name, spec_item
        ds = data.load_dataset(resolve_data_path(path))
        records = ds.records[:args.max_records]
        per_lead = {}
        for lead_name in lead_names:
            li = leads.TWELVE_LEADS.index(lead_name)
            pi = leads.TWELVE_LEADS.index(args.peak_lead)
            all_beats = []
            for rec in records:
                peaks = analysis.detect_r_peaks(rec.signal[:, pi],
                                                rec.sampling_rate)
                bm = analysis.segment_beats(rec.signal[:, li], peaks,
                                            lead=lead_name)
                if bm.n_beats:
                    all_beats.append(bm.beats)
            if not all_beats:
                raise ValueError(f"no beats detected in source {name}")
            stacked = analysis.BeatMatrix(np.concatenate(all_beats), lead_name)
            per_lead[lead_name] = analysis.beat_quantiles(stacked)
        bands[name] = per_lead
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.emit_band_plot(bands, lead_names, out / "beats.png")
    analysis.export_bands_json(bands, out / "bands.json")
    write_resolved(resolved, out)
    print(f"beat bands for {list(bands)} written to {out}")
    return 0


def cmd_interpolate(args) -> int:
    resolved = resolve_config(args, ["checkpoint", "labels_a", "labels_b",
                                     "alphas", "lead", "seed", "out"])
    net, kind, vocab, sched, cfg = rebuild_model(args.checkpoint)
    if kind != "sssd-ecg":
        raise ValueError("interpolation requires a diffusion checkpoint")
    a = data.encode_labels(parse_codes(args.labels_a), vocab)
    b = data.encode_labels(parse_codes(args.labels_b), vocab)
    alphas = tuple(float(x) for x in parse_codes(args.alphas))
    req = analysis.InterpolationRequest(a=a, b=b, alphas=alphas,
                                        seed=args.seed)
    outputs = analysis.interpolate_conditions(net, req, sched,
                                              length=cfg.length)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    twelve = [leads.reconstruct_12_leads(o.astype(np.float64)) for o in outputs]
    np.savez(out / "interpolation.npz",
             alphas=np.array(alphas),
             records=np.stack(twelve).astype(np.float32))
    _interpolation_figure(twelve, alphas, args.lead, out / "interpolation.png")
    write_resolved(resolved, out)
    print(f"interpolation grid ({len(alphas)} alphas) written to {out}")
    return 0


def _interpolation_figure(records, alphas, lead_name: str,
                          out_path: Path) -> None:
    import matplotlib.pyplot as plt
    li = leads.TWELVE_LEADS.index(lead_name)
    fig, axes = plt.subplots(len(records), 1,
                             figsize=(8, 1.6 * len(records)), squeeze=False)
    for ax_row, rec, alpha in zip(axes, records, alphas):
        ax = ax_row[0]
        sig = rec[li]
        peaks = analysis.detect_r_peaks(sig, 100)
        bm = analysis.segment_beats(sig, peaks, lead=lead_name)
        if bm.n_beats:
            band = analysis.beat_quantiles(bm)
            ax.plot(band.median, color="black")
        else:
            ax.plot(sig, color="black", lw=0.5)
        ax.set_ylabel(f"a={alpha:g}")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def cmd_leadcheck(args) -> int:
    resolve_config(args, ["data", "tol"])
    ds = data.load_dataset(resolve_data_path(args.data))
    rows = ["record_id,consistent,max_residual"]
    worst = 0.0
    n_bad = 0
    for rec in ds.records:
        ok, resid = leads.check_lead_consistency(rec.signal.T, tol=args.tol)
        rows.append(f"{rec.record_id},{int(ok)},{resid:.3e}")
        worst = max(worst, resid)
        n_bad += 0 if ok else 1
    report = "\n".join(rows) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "leadcheck.csv").write_text(report)
    else:
        sys.stdout.write(report)
    print(f"max residual {worst:.3e}; {n_bad} inconsistent records")
    return 0 if n_bad == 0 else 1


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sssd-ecg",
        description="Conditional ECG synthesis and evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="run seed (default 0; a config file may supply it)")
        p.add_argument("--workers", type=int, default=1,
                       help="intra-op worker threads")
        p.add_argument("--desk-scale", action="store_true",
                       help="apply reduced desk-scale profiles")

    p = sub.add_parser("make-toy", help="write a deterministic toy corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--labels", type=int, default=4)
    p.add_argument("--length", type=int, default=1000)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("train", help="train a generative model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", default="sssd-ecg",
                   choices=["sssd-ecg", "wavegan", "pulse2pulse"])
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate records for a label set")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--labels", default=None, help="comma-separated codes")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("synth-copy",
                       help="label-matched synthetic copy of a dataset")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_copy)

    p = sub.add_parser("evaluate", help="real/synthetic 2x2 metric grid")
    common(p)
    p.add_argument("--real", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("beatplot", help="median/quantile beat bands")
    common(p)
    p.add_argument("--data", action="append", required=True,
                   metavar="NAME=DIR")
    p.add_argument("--leads", default="I,II,V1,V2")
    p.add_argument("--peak-lead", default="II")
    p.add_argument("--max-records", type=int, default=250)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_beatplot)

    p = sub.add_parser("interpolate", help="conditional class interpolation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels-a", required=True)
    p.add_argument("--labels-b", required=True)
    p.add_argument("--alphas", default="1,0.75,0.5,0.25,0")
    p.add_argument("--lead", default="V1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("leadcheck", help="verify limb-lead identities")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_leadcheck)

    return parser


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    torch.set_num_threads(max(1, args.workers))
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
