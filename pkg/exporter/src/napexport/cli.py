"""nap-export command line."""

from __future__ import annotations

import sys

import click

from .export import ExportSpec, export
from .models import ExportError


@click.command()
@click.option("--model", required=True, help="Model id: 'toy' or a torchvision name.")
@click.option(
    "--layers",
    required=True,
    multiple=True,
    help="Module path(s) of layers to capture (repeatable or comma-separated).",
)
@click.option("--dataset", required=True,
              help="'noise:<count>[:CxHxW]' or an image-folder directory.")
@click.option("--split", default="all", show_default=True)
@click.option("--capture", type=click.Choice(["pre", "post"]), default="post",
              show_default=True, help="Capture pre- or post-ReLU values.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--batch-size", default=8, show_default=True)
@click.option("--weights", default=None,
              help="Checkpoint path, or 'default' for torchvision pretrained weights.")
@click.option("--image-size", default=32, show_default=True)
@click.option("--seed", default=0, show_default=True)
def cli(model, layers, dataset, split, capture, out_dir, batch_size, weights, image_size, seed):
    """Hook a ReLU classifier and dump per-layer activations to disk."""
    selectors = tuple(s for chunk in layers for s in chunk.split(",") if s)
    spec = ExportSpec(
        model=model,
        layers=selectors,
        dataset=dataset,
        out_dir=out_dir,
        split=split,
        batch_size=batch_size,
        capture="post_relu" if capture == "post" else "pre_relu",
        seed=seed,
        weights=weights,
        image_size=image_size,
    )
    root = export(spec)
    click.echo(f"exported {len(selectors)} layer(s) -> {root}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except (ExportError, OSError, ValueError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
