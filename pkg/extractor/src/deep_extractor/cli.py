"""Command-line entry point. Exit codes: 0 success, 1 domain error, 2 usage."""

from __future__ import annotations

import sys

import click

from .errors import ExtractorError
from .extract import ExtractorConfig, extract


@click.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "output_path", required=True, type=click.Path())
@click.option("--weights", "weights_path", type=click.Path(), default=None,
              help="Local state-dict file for the network.")
@click.option("--random-init", is_flag=True, default=False,
              help="Seeded random weights instead of a weights file (contract testing).")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for --random-init.")
@click.option("--batch-size", type=int, default=16, show_default=True)
@click.option("--device", default="cpu", show_default=True)
@click.option("--input-size", type=int, default=299, show_default=True)
def main(manifest_path, output_path, weights_path, random_init, seed, batch_size, device, input_size):
    """Extract 2,048-dim deep features for every manifest image into FV01."""
    if random_init == (weights_path is not None):
        raise click.UsageError("pass exactly one of --weights or --random-init")
    try:
        config = ExtractorConfig(
            manifest_path=manifest_path,
            output_path=output_path,
            weights_path=weights_path,
            init_seed=seed if random_init else None,
            batch_size=batch_size,
            device=device,
            input_size=input_size,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    try:
        out = extract(config)
    except ExtractorError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(1)
    click.echo(f"deep-extract: wrote {out} (+ sidecar)", err=True)


if __name__ == "__main__":
    main()
