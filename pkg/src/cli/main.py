#!/usr/bin/env python3
"""
Command-line interface for PairTune
"""

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from src.monitoring.logfire_setup import log_error, monitoring
from src.utils.errors import InvalidArgumentError, PairTuneError

console = Console()

USAGE_ERROR = 2


def create_parser() -> argparse.ArgumentParser:
    """Create and configure argument parser"""
    parser = argparse.ArgumentParser(
        prog="pairtune",
        description="PairTune: multi-subject video customization",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s pretrain --config config/experiment.json
  %(prog)s train --config config/experiment.json --ablation no-concat
  %(prog)s generate --checkpoint runs/default/checkpoint.pt --template 1 --bind cat=<new1> --bind dog=<new2>
  %(prog)s eval --frames runs/default/videos/t01 --references assets/cat.png assets/dog.png
  %(prog)s ablate --config config/experiment.json --grid components
  %(prog)s visualize-attn --checkpoint runs/default/checkpoint.pt --level l3
        """
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Echo log events to the console')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    # Pretrain command
    pretrain_parser = subparsers.add_parser('pretrain', help='Train the base model on synthetic class scenes')
    pretrain_parser.add_argument('--config', required=True, help='Experiment config file')
    pretrain_parser.add_argument('--output', help='Checkpoint path (default: <output_dir>/base.pt)')
    pretrain_parser.add_argument('--steps', type=int, help='Override pretrain_steps')

    # Synthetic assets command
    assets_parser = subparsers.add_parser('synth-assets', help='Render synthetic subject images and a manifest')
    assets_parser.add_argument('--classes', nargs='+', default=['cat', 'dog'], help='Catalogue classes')
    assets_parser.add_argument('--tokens', nargs='+', help='Learnable token per class (default <new1>, <new2>, ...)')
    assets_parser.add_argument('--output', required=True, help='Output directory')
    assets_parser.add_argument('--seed', type=int, default=0, help='Background noise seed')
    assets_parser.add_argument('--no-masks', action='store_true', help="Write '-' masks (chroma key on load)")

    # Train command
    train_parser = subparsers.add_parser('train', help='Fine-tune learnable tokens and cross-attention')
    train_parser.add_argument('--config', required=True, help='Experiment config file')
    train_parser.add_argument('--output', help='Override output_dir')
    train_parser.add_argument('--ablation', action='append', default=[], help='Ablation flag (repeatable)')
    train_parser.add_argument('--steps', type=int, help='Override steps')

    # Generate command
    generate_parser = subparsers.add_parser('generate', help='Sample videos from a checkpoint')
    generate_parser.add_argument('--checkpoint', required=True, help='Trained checkpoint')
    generate_parser.add_argument('--config', help='Experiment config for sampler settings')
    generate_parser.add_argument('--template', type=int, action='append', default=[], help='Template id (repeatable)')
    generate_parser.add_argument('--all-templates', action='store_true', help='Every template matching the bindings')
    generate_parser.add_argument('--bind', action='append', default=[], metavar='CLASS=TOKEN', help='Slot binding, in slot order')
    generate_parser.add_argument('--prompt', help='Literal prompt instead of a template')
    generate_parser.add_argument('--seed', type=int, nargs='+', help='Sampling seed(s)')
    generate_parser.add_argument('--output', default='videos', help='Output directory')
    generate_parser.add_argument('--steps', type=int, help='Denoising steps')
    generate_parser.add_argument('--guidance-scale', type=float, help='Classifier-free guidance scale')
    generate_parser.add_argument('--frames', type=int, help='Frame count')
    generate_parser.add_argument('--solver', choices=['ddim', 'dpm-solver++'], help='Update rule')

    # Eval command
    eval_parser = subparsers.add_parser('eval', help='Compute metrics for generated frame directories')
    eval_parser.add_argument('--frames', nargs='+', required=True, help='Frame directories')
    eval_parser.add_argument('--references', nargs='*', default=[], help='Subject reference images')
    eval_parser.add_argument('--prompt', help='Prompt (default: from each manifest)')
    eval_parser.add_argument('--classes', nargs='*', help='Catalogue classes for the oracles (default: manifest bindings)')
    eval_parser.add_argument('--extractor', default='random-projection', help='Extractor for CLIP-T and CLIP-I')
    eval_parser.add_argument('--dino-extractor', default='patch-stats', help='Extractor for DINO-I')
    eval_parser.add_argument('--seed', type=int, default=0, help='Extractor seed')
    eval_parser.add_argument('--output', help='Report CSV (default: report.csv next to the first directory)')

    # Ablate command
    ablate_parser = subparsers.add_parser('ablate', help='Train and evaluate an ablation grid')
    ablate_parser.add_argument('--config', required=True, help='Experiment config file')
    ablate_parser.add_argument('--grid', default='components', help='components, levels, alpha, eta or reduction')
    ablate_parser.add_argument('--output', help='Override output_dir')

    # Visualize attention command
    visualize_parser = subparsers.add_parser('visualize-attn', help='Dump per-token cross-attention heatmaps')
    visualize_parser.add_argument('--checkpoint', required=True, help='Trained checkpoint')
    visualize_parser.add_argument('--level', default='l3', help='Attention level l1..l4')
    visualize_parser.add_argument('--assets', help='Asset manifest (default: synthetic subjects from the checkpoint)')
    visualize_parser.add_argument('--output', default='heatmaps', help='Output directory')
    visualize_parser.add_argument('--seed', type=int, default=0, help='Noise seed')
    visualize_parser.add_argument('--timestep', type=int, help='Noise level (default T/2)')

    # Configuration command
    config_parser = subparsers.add_parser('config', help='Inspect an experiment config')
    config_parser.add_argument('path', help='Experiment config file')
    config_parser.add_argument('--show', action='store_true', help='Print every resolved key')

    return parser


def parse_bindings(items: Sequence[str]):
    bindings = []
    for item in items:
        if '=' not in item:
            raise InvalidArgumentError(f"Invalid binding: {item}. Use CLASS=TOKEN")
        class_name, token_name = item.split('=', 1)
        bindings.append((class_name.strip().lower(), token_name.strip().lower()))
    return bindings


def handle_pretrain(args) -> int:
    """Handle pretrain command"""
    from src.diffusion.schedule import make_schedule
    from src.training.pretrain import run_pretraining
    from src.training.progress import TrainingProgress
    from src.utils.experiment_config import load_experiment_config

    overrides = {"pretrain_steps": args.steps} if args.steps else None
    experiment = load_experiment_config(args.config, overrides)
    output = Path(args.output) if args.output else experiment.output_dir / "base.pt"
    schedule = make_schedule(experiment.schedule.timesteps, experiment.schedule.kind)

    progress = TrainingProgress(console, title="PairTune pretraining")
    path = run_pretraining(experiment.pretrain, experiment.denoiser, schedule, output, progress.update_progress)
    console.print(f"[green]✅ Base checkpoint written:[/green] {path}")
    return 0


def handle_synth_assets(args) -> int:
    """Handle synth-assets command"""
    from src.composition.manifest import write_synthetic_assets

    manifest = write_synthetic_assets(
        args.classes, args.output, token_names=args.tokens, seed=args.seed, with_masks=not args.no_masks
    )
    console.print(f"[green]✅ Assets written:[/green] {manifest}")
    return 0


def handle_train(args) -> int:
    """Handle train command"""
    from src.training.experiment import train_from_experiment
    from src.training.progress import TrainingProgress
    from src.utils.experiment_config import load_experiment_config

    overrides = {}
    if args.steps:
        overrides["steps"] = args.steps
    experiment = load_experiment_config(args.config, overrides)
    if args.ablation:
        flags = list(dict.fromkeys([flag.value for flag in experiment.train.ablations] + args.ablation))
        experiment = load_experiment_config(args.config, {**overrides, "ablations": flags})
    if args.output:
        experiment = experiment.model_copy(update={"output_dir": Path(args.output)})

    progress = TrainingProgress(console)
    result = train_from_experiment(experiment, progress_callback=progress.update_progress)
    console.print(f"[green]✅ Checkpoint:[/green] {result.checkpoint_path}")
    console.print(f"[green]✅ Loss log:[/green] {result.loss_log_path}")
    return 0


def _sampler_settings(args):
    from src.inference.config import SamplerConfig
    from src.utils.experiment_config import load_experiment_config

    sampler = load_experiment_config(args.config).sampler if args.config else SamplerConfig()
    updates = {}
    if args.steps is not None:
        updates["steps"] = args.steps
    if args.guidance_scale is not None:
        updates["guidance_scale"] = args.guidance_scale
    if args.frames is not None:
        updates["frames"] = args.frames
    if args.solver is not None:
        updates["solver"] = args.solver
    return SamplerConfig(**{**sampler.model_dump(), **updates})


def handle_generate(args) -> int:
    """Handle generate command"""
    from src.diffusion.checkpoint import load_checkpoint
    from src.inference.export import FrameManifest, export_frames
    from src.inference.sampler import sample_video
    from src.text.templates import PromptTemplateLibrary

    bindings = parse_bindings(args.bind)
    library = PromptTemplateLibrary()
    if args.prompt:
        jobs = [(None, args.prompt)]
    else:
        template_ids = list(args.template)
        if args.all_templates:
            template_ids = [t.id for t in library.list_templates(subject_count=len(bindings))]
        if not template_ids:
            raise InvalidArgumentError("give --prompt, --template or --all-templates")
        jobs = [(template_id, library.render(template_id, bindings)) for template_id in template_ids]

    sampler = _sampler_settings(args)
    seeds = args.seed or [sampler.seed]
    checkpoint = load_checkpoint(args.checkpoint)
    output = Path(args.output)
    batch_mode = len(jobs) > 1 or len(seeds) > 1

    for template_id, prompt in jobs:
        for seed in seeds:
            settings = sampler.model_copy(update={"seed": seed})
            frames = sample_video(prompt, settings, checkpoint)
            name = f"template{template_id:02d}" if template_id is not None else "prompt"
            directory = output / f"{name}_seed{seed}" if batch_mode else output
            export_frames(frames, directory, FrameManifest(
                prompt=prompt,
                seed=seed,
                sampler=settings.model_dump(mode="json"),
                fps=settings.fps,
                checkpoint=str(args.checkpoint),
                template_id=template_id,
                bindings=[list(binding) for binding in bindings],
            ))
            console.print(f"[green]✅[/green] {directory}  [dim]{prompt}[/dim]")
    return 0


def handle_eval(args) -> int:
    """Handle eval command"""
    from src.composition.manifest import load_image
    from src.composition.synthetic import get_signature
    from src.evaluation.extractors import create_extractor
    from src.evaluation.harness import evaluate_frames, subject_signatures
    from src.evaluation.report import write_report
    from src.inference.export import MANIFEST_NAME, load_frames, load_manifest

    if not args.references:
        raise InvalidArgumentError("at least one reference image is required")
    references = [load_image(path) for path in args.references]
    extractor = create_extractor(args.extractor, args.seed)
    dino_extractor = create_extractor(args.dino_extractor, args.seed)

    reports = []
    for directory in args.frames:
        frames = load_frames(directory)
        manifest = load_manifest(directory) if (Path(directory) / MANIFEST_NAME).exists() else None
        prompt = args.prompt or (manifest.prompt if manifest else None)
        if not prompt:
            raise InvalidArgumentError(f"no prompt for {directory}: pass --prompt or keep its manifest")
        if args.classes is not None:
            signatures = [get_signature(name) for name in args.classes]
        else:
            signatures = subject_signatures([tuple(b) for b in manifest.bindings]) if manifest else []
        reports.append(evaluate_frames(
            frames, prompt, references, extractor, dino_extractor, signatures, label=Path(directory).name
        ))

    output = Path(args.output) if args.output else Path(args.frames[0]).parent / "report.csv"
    write_report(reports, output, console=console)
    console.print(f"[green]✅ Report written:[/green] {output}")
    return 0


def handle_ablate(args) -> int:
    """Handle ablate command"""
    from src.evaluation.harness import run_ablation
    from src.utils.experiment_config import load_experiment_config

    experiment = load_experiment_config(args.config)
    if args.output:
        experiment = experiment.model_copy(update={"output_dir": Path(args.output)})
    run_ablation(
        args.grid,
        experiment,
        console=console,
        progress_callback=lambda event, data: console.print(f"[cyan]{event}:[/cyan] {data}"),
    )
    return 0


def handle_visualize_attn(args) -> int:
    """Handle visualize-attn command"""
    from src.attention_control.heatmaps import export_heatmaps
    from src.composition.manifest import load_asset_manifest, write_synthetic_assets
    from src.diffusion.attention import AttentionLevel
    from src.diffusion.checkpoint import load_checkpoint
    from src.training.config import TrainConfig
    from src.training.dataset import CustomizationDataset
    from src.training.trainer import capture_attention_maps

    level = AttentionLevel.parse(args.level)
    checkpoint = load_checkpoint(args.checkpoint)
    output = Path(args.output)
    if args.assets:
        assets = load_asset_manifest(args.assets)
    else:
        subjects = checkpoint.metadata.get("subjects", [])
        if not subjects:
            raise InvalidArgumentError("checkpoint lists no subjects; pass --assets")
        manifest = write_synthetic_assets(
            [s["class_name"] for s in subjects], output / "assets", token_names=[s["token_name"] for s in subjects]
        )
        assets = load_asset_manifest(manifest)

    train = TrainConfig(beta=0.0, augment=False, ablations=["no-concat"] if len(assets) < 2 else [])
    sample = CustomizationDataset(assets, train).reference_composite()
    map_set = capture_attention_maps(
        checkpoint.bundle, checkpoint.schedule, sample, [level], t=args.timestep, seed=args.seed
    )[0]
    written = export_heatmaps(map_set, sample.token_names, output, step=0, composite=sample.image)
    console.print(f"[green]✅ {len(sample.token_names)} token heatmaps at {level.value}:[/green] {output} ({len(written)} files)")
    return 0


def handle_config(args) -> int:
    """Handle config command"""
    from src.utils.experiment_config import flatten_experiment_config, load_experiment_config

    experiment = load_experiment_config(args.path)
    if args.show:
        table = Table(title=f"Experiment config: {args.path}")
        table.add_column("Key", style="cyan")
        table.add_column("Value", style="white")
        for key, value in flatten_experiment_config(experiment).items():
            table.add_row(key, str(value))
        console.print(table)
    console.print("[green]✅ Configuration is valid![/green]")
    return 0


def display_help():
    """Display help information"""
    help_text = """
[bold cyan]PairTune CLI[/bold cyan]

[bold yellow]Available Commands:[/bold yellow]
  pretrain        - Train the base model on synthetic class scenes
  synth-assets    - Render synthetic subjects and an asset manifest
  train           - Fine-tune learnable tokens and cross-attention key/value weights
  generate        - Sample videos from a trained checkpoint
  eval            - Compute CLIP-T, CLIP-I, DINO-I, T. Cons. and the oracles
  ablate          - Train and evaluate an ablation grid
  visualize-attn  - Dump per-token cross-attention heatmaps
  config          - Validate and show an experiment config

[bold yellow]Quick Start:[/bold yellow]
  1. Base model: python -m src.cli.main pretrain --config config/experiment.json
  2. Fine-tune:  python -m src.cli.main train --config config/experiment.json
  3. Generate:   python -m src.cli.main generate --checkpoint runs/default/checkpoint.pt --template 1 --bind cat=<new1> --bind dog=<new2>
    """

    console.print(Panel(help_text, title="Help", border_style="cyan"))


HANDLERS = {
    'pretrain': handle_pretrain,
    'synth-assets': handle_synth_assets,
    'train': handle_train,
    'generate': handle_generate,
    'eval': handle_eval,
    'ablate': handle_ablate,
    'visualize-attn': handle_visualize_attn,
    'config': handle_config,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the exit status"""
    load_dotenv()
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = create_parser()

    if not argv:
        display_help()
        return 0

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return USAGE_ERROR if e.code else 0

    if args.verbose:
        monitoring.enable_console()
    handler = HANDLERS.get(args.command)
    if handler is None:
        parser.print_help()
        return USAGE_ERROR

    try:
        return handler(args)
    except PairTuneError as e:
        key = getattr(e, "key", None)
        detail = f" (key: {key})" if key else ""
        console.print(f"\n[red]❌ {e.code.value}: {e.message}{detail}[/red]")
        log_error(type(e).__name__, e.message, {"command": args.command, **e.to_dict()})
        return 1
    except KeyboardInterrupt:
        console.print("\n[yellow]Operation interrupted by user.[/yellow]")
        return 130


if __name__ == "__main__":
    sys.exit(main())
