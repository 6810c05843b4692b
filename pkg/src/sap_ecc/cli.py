"""``sap-ecc`` command line: train, prune, sap, recover, eval, correlate, library.

Every command reads an optional JSON/YAML run config; command-line flags
override individual fields. Outputs go to ``--out-dir`` (default: the
``SAP_OUTPUT_DIR`` environment variable, else ``./sap_out``). CSV files
start with ``# config_hash=...`` and ``# seed=...`` comment lines.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import click

from . import library as libmod
from .bp import BpConfig, bp_decoder_fn
from .catalog import resolve_code
from .channel import ChannelConfig, evaluate, fmt_float, hard_decision, points_to_csv, sigma_from_ebn0
from .config import RunConfig, load_config, with_overrides
from .decoder import DecoderModel, load_checkpoint, save_checkpoint
from .errors import SapError, ValidationError
from .experiments import correlation_study, default_pairs, distinct_codes, pretrain_backbone, resolve_pair
from .lora import LoraAdapterSet, adapter_ratio, attach, merge, recover
from .masks import StructuredMask
from .pruning import apply_mask, compact, dump_json, fisher_importance, pruning_report, select_mask
from .training import train


class _SapGroup(click.Group):
    """Maps package errors to their category exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except SapError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(exc.exit_code)


# ------------------------------------------------------------------ helpers


def _config(ctx, path, overrides: dict) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    return with_overrides(cfg, overrides)


def _out_dir(ctx) -> Path:
    out = Path(ctx.obj["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed}


def _write_csv(path: Path, cfg: RunConfig, columns: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    for key, value in _header(cfg).items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt_float(v) if isinstance(v, float) else v for v in row])
    path.write_text(buf.getvalue())


def _one_code(cfg: RunConfig):
    if not cfg.codes:
        raise ValidationError("codes: at least one code name or alist path is required")
    return resolve_code(cfg.codes[0])


def _pct(ratio: float) -> str:
    return format(ratio * 100, "g")


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON or YAML run config.")
seed_option = click.option("--seed", type=int, help="Overrides the config seed.")
code_option = click.option("--code", "codes", multiple=True, help="Catalog name or alist path (repeatable).")


@click.group(cls=_SapGroup)
@click.option(
    "--out-dir",
    envvar="SAP_OUTPUT_DIR",
    default="sap_out",
    show_default=True,
    type=click.Path(file_okay=False),
    help="Output directory (env: SAP_OUTPUT_DIR).",
)
@click.pass_context
def cli(ctx, out_dir):
    """Spectral-aligned pruning for transformer ECC decoders."""
    ctx.ensure_object(dict)
    ctx.obj["out_dir"] = out_dir


# -------------------------------------------------------------------- train


@cli.command("train")
@config_option
@code_option
@seed_option
@click.option("--epochs", type=int)
@click.option("--steps-per-epoch", type=int)
@click.pass_context
def train_cmd(ctx, config_path, codes, seed, epochs, steps_per_epoch):
    """Train a backbone on the configured code mixture."""
    cfg = _config(
        ctx,
        config_path,
        {"codes": list(codes) or None, "seed": seed, "train.epochs": epochs, "train.steps_per_epoch": steps_per_epoch},
    )
    if not cfg.codes:
        raise ValidationError("codes: at least one code name or alist path is required")
    code_list = [resolve_code(c) for c in cfg.codes]
    result = train(DecoderModel(cfg.arch.build(), seed=cfg.seed), code_list, cfg.train_config())
    out = _out_dir(ctx)
    save_checkpoint(result.model, out / "checkpoint.json")
    _write_csv(out / "train_loss.csv", cfg, ["epoch", "loss"], [[i + 1, v] for i, v in enumerate(result.epoch_loss)])
    (out / "config.json").write_text(cfg.canonical_json() + "\n")
    click.echo(f"final epoch loss {result.epoch_loss[-1]:.6g}; checkpoint {out / 'checkpoint.json'}")


# -------------------------------------------------------------------- prune


@cli.command("prune")
@config_option
@code_option
@seed_option
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ratio", "ratios", type=float, multiple=True, help="Target FLOPs reduction (repeatable for a sweep).")
@click.option("--use-mask", type=click.Path(exists=True, dir_okay=False), help="Skip scoring and apply this mask.")
@click.pass_context
def prune_cmd(ctx, config_path, codes, seed, checkpoint, ratios, use_mask):
    """Score units, select a mask under the FLOPs budget and compact the model."""
    cfg = _config(ctx, config_path, {"codes": list(codes) or None, "seed": seed})
    code = _one_code(cfg)
    model = load_checkpoint(checkpoint)
    seq_len = code.n + code.pcm.rows
    out = _out_dir(ctx)
    if use_mask:
        mask = StructuredMask.from_json(Path(use_mask).read_text())
        plan = [("mask", mask)]
    else:
        scores = fisher_importance(model, code, cfg.calibration())
        dump_json(scores.to_dict(), out / "scores.json")
        plan = [(_pct(r), select_mask(scores, model.arch, seq_len, r)) for r in (ratios or [cfg.prune.target_ratio])]
    for tag, mask in plan:
        small = compact(apply_mask(model, mask))
        report = pruning_report(model, mask, small, seq_len)
        report.update(code=code.name, config_hash=cfg.config_hash(), seed=cfg.seed)
        (out / f"mask_{tag}.json").write_text(mask.to_json() + "\n")
        save_checkpoint(small, out / f"pruned_{tag}.json")
        dump_json(report, out / f"report_{tag}.json")
        click.echo(f"{tag}: FLOPs reduction {report['flops_reduction']:.4f}, params {report['params_pruned']}/{report['params_full']}")


# ---------------------------------------------------------------------- sap


@cli.command("sap")
@config_option
@code_option
@seed_option
@click.option("--library", "library_path", required=True, type=click.Path(dir_okay=False))
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False), help="Backbone used if a mask must be derived.")
@click.option("--create-new", is_flag=True, help="Start an empty library when the file does not exist.")
@click.pass_context
def sap_cmd(ctx, config_path, codes, seed, library_path, checkpoint, create_new):
    """Select a mask for a code from the library, deriving and storing one if needed."""
    from .pruning import derive_mask

    cfg = _config(ctx, config_path, {"codes": list(codes) or None, "seed": seed})
    code = _one_code(cfg)
    model = load_checkpoint(checkpoint)
    if Path(library_path).exists():
        lib = libmod.load(library_path)
    elif create_new:
        lib = libmod.MaskLibrary(model.arch, K=cfg.library.K, tau=cfg.library.tau, beta=cfg.library.beta)
    else:
        raise ValidationError(f"library {library_path} does not exist (pass --create-new to start one)")
    sel = libmod.select_or_create(
        lib, code.pcm, lambda pcm: derive_mask(model, code, cfg.prune.target_ratio, cfg.calibration()), code.name
    )
    if sel.decision is libmod.Decision.CREATED:
        libmod.save(sel.library, library_path)
    record = {
        "code": code.name,
        "decision": sel.decision.value,
        "kappa": sel.similarity,
        "distance": sel.distance,
        "index": sel.index,
        "library_size": len(sel.library),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
    }
    out = _out_dir(ctx)
    dump_json(record, out / "decision.json")
    (out / "selected_mask.json").write_text(sel.mask.to_json() + "\n")
    click.echo(json.dumps(record, sort_keys=True))


# ------------------------------------------------------------------ recover


@cli.command("recover")
@config_option
@code_option
@seed_option
@click.option("--pruned", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--teacher", type=click.Path(exists=True, dir_okay=False), help="Unpruned backbone (not needed with --gamma 0).")
@click.option("--gamma", type=float)
@click.option("--rank", "ranks", type=int, multiple=True, help="Adapter rank (repeatable for a sweep).")
@click.option("--epochs", type=int)
@click.option("--merge", "do_merge", is_flag=True, help="Also write a checkpoint with the adapters folded in.")
@click.pass_context
def recover_cmd(ctx, config_path, codes, seed, pruned, teacher, gamma, ranks, epochs, do_merge):
    """Train LoRA adapters on a frozen pruned model with BCE plus distillation."""
    cfg = _config(ctx, config_path, {"codes": list(codes) or None, "seed": seed, "recover.gamma": gamma, "recover.epochs": epochs})
    code = _one_code(cfg)
    student = load_checkpoint(pruned)
    teacher_model = load_checkpoint(teacher) if teacher else None
    out = _out_dir(ctx)
    for r in ranks or [cfg.recover.rank]:
        rcfg = with_overrides(cfg, {"recover.rank": r})
        res = recover(student, teacher_model, code, rcfg.recovery_config())
        res.adapters.save(out / f"adapters_r{r}.json")
        _write_csv(out / f"recover_r{r}.csv", rcfg, ["epoch", "loss"], [[i + 1, v] for i, v in enumerate(res.epoch_loss)])
        if do_merge:
            save_checkpoint(merge(student, res.adapters.detached()), out / f"merged_r{r}.json")
        click.echo(
            f"rank {r}: final loss {res.epoch_loss[-1]:.6g}, "
            f"adapter/backbone params {adapter_ratio(res.adapters, student):.4f}"
        )


# --------------------------------------------------------------------- eval


def _decoder_for(model_spec: str, adapters: str | None, code, cfg: RunConfig, snr: float):
    if model_spec == "hard":
        return hard_decision
    if model_spec == "bp":
        sigma = float(sigma_from_ebn0(snr, code.rate))
        return bp_decoder_fn(code.pcm, sigma, BpConfig(max_iters=cfg.eval.bp_iters))
    model = load_checkpoint(model_spec)
    if adapters:
        model = attach(model, LoraAdapterSet.load(adapters))
    return model.decoder_fn(code.pcm)


@cli.command("eval")
@config_option
@code_option
@seed_option
@click.option("--model", "model_spec", required=True, help="Checkpoint path, 'bp' or 'hard'.")
@click.option("--adapters", type=click.Path(exists=True, dir_okay=False), help="Adapter file to attach to the checkpoint.")
@click.option("--snr", "snrs", type=float, multiple=True, help="Eb/N0 in dB (repeatable).")
@click.option("--frames", type=int, help="Minimum frames per point.")
@click.option("--min-errors", type=int)
@click.option("--name", default="eval", show_default=True, help="Output CSV stem.")
@click.pass_context
def eval_cmd(ctx, config_path, codes, seed, model_spec, adapters, snrs, frames, min_errors, name):
    """Monte-Carlo BER/FER per Eb/N0 point; every model type sees the same noise for a seed."""
    cfg = _config(
        ctx,
        config_path,
        {
            "codes": list(codes) or None,
            "seed": seed,
            "eval.snr_db": list(snrs) or None,
            "eval.min_frames": frames,
            "eval.min_errors": min_errors,
        },
    )
    code = _one_code(cfg)
    if adapters and model_spec in ("bp", "hard"):
        raise ValidationError("--adapters needs a checkpoint model")
    points = []
    for snr in cfg.eval.snr_db:
        dec = _decoder_for(model_spec, adapters, code, cfg, snr)
        ch = ChannelConfig(snr, code.rate, cfg.seed)
        points += evaluate([ch], code, dec, min_frames=cfg.eval.min_frames, min_errors=cfg.eval.min_errors)
    path = _out_dir(ctx) / f"{name}.csv"
    header = {**_header(cfg), "code": code.name, "model": "checkpoint" if model_spec not in ("bp", "hard") else model_spec}
    path.write_text(points_to_csv(points, header, neg_ln=True))
    for pt in points:
        click.echo(f"{pt.ebn0_db:g} dB: BER {pt.ber:.4e}  FER {pt.fer:.4e}  -ln(BER) {fmt_float(pt.neg_ln_ber)}")


# ---------------------------------------------------------------- correlate


def _parse_pair(text: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2 or not all(parts):
        raise ValidationError(f"pair {text!r} must look like 'CODE_A,CODE_B' (CODE_B may be RREF or PERM:<seed>)")
    return parts


@cli.command("correlate")
@config_option
@seed_option
@click.option("--pair", "pair_texts", multiple=True, help="'A,B' code pair; B may be RREF or PERM:<seed> (repeatable).")
@click.option("--backbone", "backbones", multiple=True, type=click.Path(exists=True, dir_okay=False), help="Backbone checkpoint; the i-th gets seed base+i (repeatable).")
@click.option("--seeds", type=int, default=3, show_default=True, help="Backbones to pretrain when none are given.")
@click.pass_context
def correlate_cmd(ctx, config_path, seed, pair_texts, backbones, seeds):
    """Spectral similarity versus dedicated-mask Jaccard over code pairs, with Pearson rho per metric."""
    cfg = _config(ctx, config_path, {"seed": seed, "pairs": [_parse_pair(p) for p in pair_texts] or None})
    pairs = [resolve_pair(a, b) for a, b in cfg.pairs] if cfg.pairs else default_pairs()
    if len(pairs) < 3:
        raise ValidationError("pairs: Pearson correlation needs at least 3 pairs")
    if backbones:
        models = {cfg.seed + i: load_checkpoint(p) for i, p in enumerate(backbones)}
    else:
        codes = distinct_codes(pairs)
        models = {}
        for i in range(seeds):
            s = cfg.seed + i
            models[s] = pretrain_backbone(codes, cfg.arch.build(), with_overrides(cfg, {"seed": s}).train_config())
    res = correlation_study(
        pairs,
        models,
        target_ratio=cfg.prune.target_ratio,
        calib_frames=cfg.prune.calib_frames,
        beta_adjacency=cfg.library.beta,
        K=cfg.library.K,
    )
    out = _out_dir(ctx)
    cols = ["pair", "kind", "d_adjacency", "d_laplacian", "d_wd", "kappa_adjacency", "kappa_laplacian", "kappa_wd", "mean_jaccard"]
    cols += [f"jaccard_seed{s}" for s in res.seeds]
    rows = [
        [r.label, r.kind, r.d_adjacency, r.d_laplacian, r.d_wd, r.kappa_adjacency, r.kappa_laplacian, r.kappa_wd, r.mean_jaccard]
        + [float(j) for j in r.jaccards]
        for r in res.rows
    ]
    _write_csv(out / "correlation.csv", cfg, cols, rows)
    summary = {"rho": res.rho, "beta": res.beta, "seeds": res.seeds, "pairs": len(pairs), "config_hash": cfg.config_hash()}
    dump_json({k: ({m: (None if math.isnan(v) else v) for m, v in d.items()} if isinstance(d, dict) else d) for k, d in summary.items()}, out / "correlation_summary.json")
    for metric, rho in res.rho.items():
        click.echo(f"rho_{metric} = {rho:.4f}")


# ------------------------------------------------------------------ library


@cli.group("library")
def library_group():
    """Inspect or extend a mask library file."""


@library_group.command("show")
@click.option("--library", "library_path", required=True, type=click.Path(dir_okay=False))
def library_show(library_path):
    lib = libmod.load(library_path)
    arch = lib.arch
    click.echo(f"K={lib.K} tau={lib.tau:g} beta={lib.beta:g} arch=L{arch.layers}/h{arch.heads_per_layer}/d{arch.d_model}/f{arch.d_ffn}")
    for i, e in enumerate(lib.entries):
        kept = int(e.mask.head_bits.sum()), int(e.mask.ffn_bits.sum())
        n, k = e.signature.source_dims
        click.echo(f"{i:3d}  {e.code_label or '-':<20} (n={n}, k={k})  heads={kept[0]} ffn={kept[1]}  {e.created_at}")


@library_group.command("add")
@config_option
@click.option("--library", "library_path", required=True, type=click.Path(dir_okay=False))
@click.option("--code", required=True)
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--label")
@click.option("--create-new", is_flag=True, help="Start an empty library when the file does not exist.")
def library_add(config_path, library_path, code, mask_path, label, create_new):
    cfg = load_config(config_path) if config_path else RunConfig()
    c = resolve_code(code)
    mask = StructuredMask.from_json(Path(mask_path).read_text())
    if Path(library_path).exists():
        lib = libmod.load(library_path)
    elif create_new:
        lib = libmod.MaskLibrary(mask.arch, K=cfg.library.K, tau=cfg.library.tau, beta=cfg.library.beta)
    else:
        raise ValidationError(f"library {library_path} does not exist (pass --create-new to start one)")
    lib = lib.add(c.pcm, mask, label or c.name)
    libmod.save(lib, library_path)
    click.echo(f"library now holds {len(lib)} entries")


def main() -> None:
    cli(prog_name="sap-ecc")


if __name__ == "__main__":
    main()
