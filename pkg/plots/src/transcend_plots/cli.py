"""`plots` command line: render figure analogs from a report CSV."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .render import FIGURE_IDS, FigureSpec, RenderError, render, render_all


@click.group()
def main():
    """Render transcend-lab figure analogs from report CSVs."""


@main.command("render")
@click.option("--figure", "figure_id", type=click.Choice(list(FIGURE_IDS) + ["all"]),
              required=True, help="Figure analog to render.")
@click.option("--in", "csv_path", type=click.Path(path_type=Path), required=True,
              help="Input report CSV.")
@click.option("--out", "output_path", type=click.Path(path_type=Path), required=True,
              help="Output PNG path (a directory when --figure all).")
@click.option("--title", default=None, help="Figure title override.")
@click.option("--no-legend", is_flag=True, help="Suppress the legend.")
def render_cmd(figure_id, csv_path, output_path, title, no_legend):
    """Render one figure (or all four) from a report CSV."""
    try:
        if figure_id == "all":
            written = render_all(csv_path, output_path)
            for path in written:
                click.echo(f"wrote {path}")
        else:
            spec = FigureSpec(figure_id=figure_id, csv_path=csv_path,
                              output_path=output_path, title=title,
                              legend=not no_legend)
            click.echo(f"wrote {render(spec)}")
    except RenderError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
