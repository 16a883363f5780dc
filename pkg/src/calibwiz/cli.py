"""Command-line interface: serve the session API, calibrate from a corner
file, suggest the next pose, run synthetic experiments, render maps."""

from __future__ import annotations

import csv
import json
import sys

import click
import numpy as np

from . import io as cwio
from .calibration import calibrate
from .geometry import IntrinsicParams
from .planner import (PlannerConfig, default_search_space, precompute_base,
                      search_next_pose)
from .synthetic import (SCHEMES, ExperimentConfig, run_experiment, summarize,
                        shared_corner_model)
from .uncertainty import render_map, to_pgm, to_sidecar

MODEL_CHOICES = click.Choice(["pinhole3", "pinhole-k1", "pinhole-k1k2"])


@click.group()
def main():
    """Camera-calibration guidance toolkit."""


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(port, host):
    """Run the session HTTP service."""
    import uvicorn
    from .service import create_app
    uvicorn.run(create_app(), host=host, port=port)


@main.command()
@click.option("--obs", "obs_path", required=True, type=click.Path(exists=True),
              help="Observation JSON file.")
@click.option("--model", "model_kind", default="pinhole-k1k2", type=MODEL_CHOICES,
              show_default=True)
@click.option("--weighted/--unweighted", default=False, show_default=True,
              help="Use per-corner weight matrices from the file.")
@click.option("--out", "out_path", default=None, help="Write state JSON here.")
def calibrate_cmd(obs_path, model_kind, weighted, out_path):
    """Calibrate from a corner-observation file."""
    obs, target, _ = cwio.load_observations(obs_path)
    state = calibrate(obs, target, model_kind, weighted=weighted)
    doc = cwio.state_to_dict(state)
    doc["target"] = target.to_dict()
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(doc, fh, indent=1)
    click.echo(json.dumps({"theta": doc["theta"], "rms": state.rms,
                           "trace_sigma": state.trace_sigma()}, indent=1))


main.add_command(calibrate_cmd, name="calibrate")


@main.command()
@click.option("--state", "state_path", required=True, type=click.Path(exists=True),
              help="State JSON (as written by calibrate --out).")
@click.option("--obs", "obs_path", required=True, type=click.Path(exists=True))
@click.option("--budget", default=3000, show_default=True)
@click.option("--method", default="sa", type=click.Choice(["sa", "es"]),
              show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--weighted", is_flag=True, help="Weight corners by the predicted "
                                               "autocorrelation model.")
def suggest(state_path, obs_path, budget, method, seed, weighted):
    """Propose the next best acquisition pose."""
    state = cwio.load_state(state_path)
    obs, target, image_size = cwio.load_observations(obs_path)
    base = precompute_base(state, obs, target)
    space = default_search_space(state.theta, target, image_size)
    cfg = PlannerConfig(method=method, budget=budget, seed=seed,
                        use_corner_model=weighted)
    model = shared_corner_model() if weighted else None
    result = search_next_pose(base, state, target, space, cfg, model)
    click.echo(json.dumps(result.to_dict(), indent=1))


@main.command()
@click.option("--scheme", default="wizard", type=click.Choice(SCHEMES),
              show_default=True)
@click.option("--trials", default=30, show_default=True)
@click.option("--images", default=20, show_default=True)
@click.option("--noise", default=0.5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--budget", default=800, show_default=True)
@click.option("--truth", default="800,320,240,0.01,0.1", show_default=True,
              help="Ground truth f,u,v,k1,k2.")
@click.option("--out", "out_path", default=None, help="CSV output path.")
def simulate(scheme, trials, images, noise, seed, budget, truth, out_path):
    """Run a synthetic scheme-comparison experiment."""
    vals = [float(x) for x in truth.split(",")]
    gt = IntrinsicParams.from_vector("pinhole-k1k2", np.array(vals))
    cfg = ExperimentConfig(ground_truth=gt, scheme=scheme, trials=trials,
                           images_per_trial=images, noise_sigma=noise,
                           seed=seed, planner_budget=budget)
    result = run_experiment(cfg)
    fields = ["trial", "scheme", "image_count", "f", "u", "v", "k1", "k2",
              "trace_sigma", "rms"]
    out = open(out_path, "w", newline="") if out_path else sys.stdout
    writer = csv.DictWriter(out, fieldnames=fields)
    writer.writeheader()
    for row in result.rows:
        writer.writerow({k: row[k] for k in fields})
    if out_path:
        out.close()
    for entry in summarize(result.rows, gt):
        click.echo(json.dumps(entry), err=True)
    if result.failures:
        click.echo(f"{len(result.failures)} trial(s) failed", err=True)


@main.command(name="map")
@click.option("--state", "state_path", required=True, type=click.Path(exists=True))
@click.option("--size", default="640,480", show_default=True)
@click.option("--stat", default="trace",
              type=click.Choice(["trace", "max_eigenvalue", "determinant"]),
              show_default=True)
@click.option("--out", "out_path", required=True,
              help="PGM output path (raw sidecar written alongside as .umap).")
def map_cmd(state_path, size, stat, out_path):
    """Render the per-pixel uncertainty map of a calibration state."""
    state = cwio.load_state(state_path)
    if state.sigma is None:
        raise click.ClickException("state has no covariance matrix")
    w, h = (int(x) for x in size.split(","))
    umap = render_map(state.theta, state.sigma, (w, h), stat)
    with open(out_path, "w") as fh:
        fh.write(to_pgm(umap))
    with open(out_path + ".umap", "wb") as fh:
        fh.write(to_sidecar(umap))
    click.echo(f"wrote {out_path} and {out_path}.umap")
