"""Command-line entry points: train, compress, decompress, eval, plot."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import CodecError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="illm", description="neural image codec toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training stage")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--stage", required=True, choices=["1", "2", "labeler"])

    p_comp = sub.add_parser("compress", help="compress an image to a container file")
    p_comp.add_argument("-i", "--input", required=True)
    p_comp.add_argument("-o", "--output", required=True)
    p_comp.add_argument("--ckpt", required=True)

    p_dec = sub.add_parser("decompress", help="decode a container file to an image")
    p_dec.add_argument("-i", "--input", required=True)
    p_dec.add_argument("-o", "--output", required=True)
    p_dec.add_argument("--ckpt", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint over a dataset directory")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--config", default=None)

    p_plot = sub.add_parser("plot", help="plot rate curves from metric reports")
    p_plot.add_argument("--reports", nargs="+", required=True)
    p_plot.add_argument("--out", required=True)
    return parser


def _cmd_train(args) -> int:
    import torch

    from .codec import CodecConfig, HyperpriorCodec, load_checkpoint
    from .config import parse_config
    from .discriminator import DiscriminatorConfig, make_discriminator
    from .labeler import LabelerConfig, VQLabeler
    from .losses import LossWeights, PerceptualExtractor
    from .schedules import RateTargetSchedule, StagePlan, finetune_plan
    from .training import (
        ImageDirectoryDataset,
        MetricsLogger,
        TrainingSession,
        save_stage_checkpoints,
        seed_everything,
    )

    cfg = parse_config(args.config)["train"]
    seed_everything(cfg["seed"])
    if not cfg["data_dir"]:
        raise CodecError("config [train] data_dir is required")
    out_dir = Path(cfg["out_dir"])
    extractor = PerceptualExtractor() if cfg["use_perceptual"] else None
    weights = LossWeights(
        lambda_adv=cfg["lambda_adv"] if args.stage == "2" else 0.0,
        lambda_mse=cfg["lambda_mse"],
    )
    sched = RateTargetSchedule.from_preset(cfg["rate_preset"])

    if cfg["resume"]:
        session = TrainingSession.load(cfg["resume"], extractor=extractor)
    elif args.stage == "1":
        codec = HyperpriorCodec(
            CodecConfig(
                latent_channels=cfg["latent_channels"],
                hyper_channels=cfg["hyper_channels"],
                base_channels=cfg["base_channels"],
            )
        )
        plan = StagePlan(
            stage="pretrain",
            total_steps=cfg["steps"],
            warmup_steps=cfg["warmup_steps"],
            peak_lr=cfg["peak_lr"],
            weight_decay=cfg["weight_decay"],
        )
        session = TrainingSession(
            "pretrain", codec=codec, plan=plan, sched=sched, weights=weights,
            extractor=extractor,
        )
    elif args.stage == "labeler":
        labeler = VQLabeler(
            LabelerConfig(
                codebook_size=cfg["codebook_size"],
                embed_dim=cfg["embed_dim"],
                base_channels=cfg["labeler_base_channels"],
                lambda_mse=cfg["labeler_lambda_mse"],
            )
        )
        plan = StagePlan(
            stage="labeler",
            total_steps=cfg["steps"],
            warmup_steps=cfg["warmup_steps"],
            peak_lr=cfg["peak_lr"],
            weight_decay=cfg["weight_decay"],
        )
        session = TrainingSession(
            "labeler", labeler=labeler, plan=plan,
            weights=LossWeights(lambda_mse=cfg["labeler_lambda_mse"]),
            extractor=extractor,
        )
    else:  # stage 2
        if not cfg["codec_ckpt"]:
            raise CodecError("stage 2 requires codec_ckpt (the stage-1 checkpoint)")
        payload = load_checkpoint(cfg["codec_ckpt"], "codec")
        codec = HyperpriorCodec(payload["config"])
        codec.load_state_dict(payload["state_dict"])
        labeler = None
        if cfg["disc_kind"] == "illm_unet":
            if not cfg["labeler_ckpt"]:
                raise CodecError("stage 2 with the multi-class head requires labeler_ckpt")
            lab_payload = load_checkpoint(cfg["labeler_ckpt"], "labeler")
            labeler = VQLabeler(lab_payload["config"])
            labeler.load_state_dict(lab_payload["state_dict"])
            num_classes = labeler.config.codebook_size
        else:
            num_classes = cfg["codebook_size"]
        disc = make_discriminator(
            DiscriminatorConfig(
                kind=cfg["disc_kind"],
                normalization=cfg["disc_normalization"],
                base_channels=cfg["disc_base_channels"],
                num_classes=num_classes,
                conditioning_channels=(
                    codec.config.latent_channels if cfg["disc_kind"] == "patchgan" else 0
                ),
            )
        )
        session = TrainingSession(
            "finetune", codec=codec, labeler=labeler, discriminator=disc,
            plan=finetune_plan(total_steps=cfg["steps"], disc_lr=cfg["disc_lr"]),
            sched=sched, weights=weights, extractor=extractor,
        )

    expected_stage = {"1": "pretrain", "2": "finetune", "labeler": "labeler"}[args.stage]
    if session.stage != expected_stage:
        raise CodecError(
            f"--stage {args.stage} does not match the session stage {session.stage!r}"
        )
    dataset = ImageDirectoryDataset(cfg["data_dir"], cfg["crop_size"], seed=cfg["seed"])
    logger = MetricsLogger(out_dir / f"stage{args.stage}_metrics.jsonl")
    step_fn = {
        "pretrain": session.stage1_step,
        "finetune": session.stage2_step,
        "labeler": session.labeler_step,
    }[session.stage]
    remaining = max(0, session.plan.total_steps - session.step)
    for batch in dataset.batches(cfg["batch_size"], remaining):
        metrics = step_fn(batch)
        logger.log(metrics)
        if session.step % cfg["checkpoint_every"] == 0:
            save_stage_checkpoints(session, out_dir, f"stage{args.stage}")
    written = save_stage_checkpoints(session, out_dir, f"stage{args.stage}")
    logger.close()
    print(f"stage {args.stage} finished at step {session.step}; wrote {written}")
    return 0


def _cmd_compress(args) -> int:
    from .codec import load_codec
    from .metrics import load_image

    codec = load_codec(args.ckpt)
    image = load_image(args.input)
    Path(args.output).write_bytes(codec.compress(image))
    return 0


def _cmd_decompress(args) -> int:
    from .codec import load_codec
    from .metrics import save_image

    codec = load_codec(args.ckpt)
    data = Path(args.input).read_bytes()
    save_image(args.output, codec.decompress(data))
    return 0


def _cmd_eval(args) -> int:
    from .codec import load_codec
    from .config import RunConfig, parse_config
    from .metrics import evaluate_codec

    eval_cfg = (parse_config(args.config) if args.config else RunConfig())["eval"]
    codec = load_codec(args.ckpt)
    report = evaluate_codec(
        codec,
        args.dataset,
        extractor_id=eval_cfg["extractor"],
        crop_policy=eval_cfg["crop_policy"],
        codec_id=Path(args.ckpt).stem,
        kid_subset_size=eval_cfg["kid_subset_size"] or None,
        kid_subsets=eval_cfg["kid_subsets"],
        seed=eval_cfg["seed"],
    )
    Path(args.report).write_text(report.to_json())
    print(f"wrote {args.report}: {report.aggregate}")
    return 0


def _cmd_plot(args) -> int:
    from .plotting import plot_rd

    notes = plot_rd(args.reports, args.out)
    for note in notes:
        print(f"warning: {note}", file=sys.stderr)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "eval": _cmd_eval,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
