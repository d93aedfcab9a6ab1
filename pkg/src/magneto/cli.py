"""Batch driver for the full lifecycle.

Exit codes are a stable scripting contract: 0 success, 1 domain error,
2 usage error, 3 I/O or network error.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import fixtures, learner, report
from .ingest import (DEFAULT_RATE_HZ, ChannelSpec, TraceHeader, TraceSpec,
                     format_trace, parse_trace_with_header, segment,
                     synthesize_trace)
from .learner import TrainConfig

EXIT_DOMAIN = 1
EXIT_USAGE = 2
EXIT_IO = 3


class DomainExit(click.ClickException):
    exit_code = EXIT_DOMAIN


class IoExit(click.ClickException):
    exit_code = EXIT_IO


def _domain_guard(fn):
    """Map engine errors to the documented exit codes."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, KeyError, learner.TrainingDivergedError) as exc:
            raise DomainExit(str(exc))
        except OSError as exc:
            raise IoExit(str(exc))

    return wrapper


def _build_config(config_path, defaults=None, **overrides) -> TrainConfig:
    base = dict(defaults) if defaults else {}
    if config_path:
        base.update(json.loads(Path(config_path).read_text()))
    base.update({k: v for k, v in overrides.items() if v is not None})
    if "layer_dims" in base:
        base["layer_dims"] = tuple(base["layer_dims"])
    return TrainConfig(**base)


def _load_data_dir(data_dir: Path, config: TrainConfig) -> dict:
    """Group windows by label across every .trace file in a directory."""
    out: dict[str, list] = {}
    trace_files = sorted(Path(data_dir).glob("*.trace"))
    if not trace_files:
        raise DomainExit(f"no .trace files in {data_dir}")
    for path in trace_files:
        header, frames = parse_trace_with_header(path.read_bytes())
        label = header.label
        if label is None:
            raise DomainExit(f"{path.name}: trace has no label")
        out.setdefault(label, []).extend(
            segment(frames, config.window_len, config.hop, label=label))
    return out


def _load_recordings(data_path: Path, config: TrainConfig) -> list:
    """Windows from one trace file or every trace in a directory."""
    paths = ([data_path] if data_path.is_file()
             else sorted(data_path.glob("*.trace")))
    if not paths:
        raise DomainExit(f"no .trace files in {data_path}")
    windows = []
    for path in paths:
        _header, frames = parse_trace_with_header(path.read_bytes())
        windows.extend(segment(frames, config.window_len, config.hop))
    return windows


@click.group()
def main():
    """Edge activity-recognition toolkit."""


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, path_type=Path),
              help="JSON trace-spec file.")
@click.option("--preset", type=click.Choice(["demo", "demo6"]),
              help="Built-in synthetic class presets (demo6 adds the demo "
                   "new-activity class).")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--windows", default=100, show_default=True,
              help="Windows per class for preset generation.")
@click.option("--seed", default=7, show_default=True)
@_domain_guard
def synth(spec_path, preset, out_dir, windows, seed):
    """Generate labeled trace files, from a spec file or a preset."""
    if (spec_path is None) == (preset is None):
        raise click.UsageError("provide exactly one of --spec or --preset")
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if spec_path is not None:
        spec_doc = json.loads(spec_path.read_text())
        for entry in spec_doc["classes"]:
            spec = TraceSpec(
                class_name=entry["name"],
                duration_s=float(entry["duration_s"]),
                channels=tuple(ChannelSpec(
                    base=float(c.get("base", 0.0)),
                    amplitude=float(c.get("amplitude", 0.0)),
                    frequency_hz=float(c.get("frequency_hz", 0.0)),
                    noise_sigma=float(c.get("noise_sigma", 0.0)),
                ) for c in entry["channels"]),
                seed=int(entry.get("seed", seed)),
                rate_hz=float(entry.get("rate_hz", DEFAULT_RATE_HZ)),
            )
            frames = synthesize_trace(spec)
            path = out_dir / f"{spec.class_name}.trace"
            header = TraceHeader(len(spec.channels), spec.rate_hz, spec.class_name)
            path.write_bytes(format_trace(frames, header))
            written.append(path)
    else:
        classes = dict(fixtures.PRESET_CLASSES)
        if preset == "demo6":
            classes[fixtures.NEW_CLASS_NAME] = fixtures.NEW_CLASS_PARAMS
        for i, (name, params) in enumerate(classes.items()):
            session_wins = 10
            specs = fixtures.session_specs(
                name, params,
                n_sessions=-(-windows // session_wins),
                session_duration_s=(120 + (session_wins - 1) * 60) / 120.0,
                seed=seed + 101 * i)
            for j, spec in enumerate(specs):
                frames = synthesize_trace(spec)
                path = out_dir / f"{name}_{j:03d}.trace"
                header = TraceHeader(len(spec.channels), spec.rate_hz, name)
                path.write_bytes(format_trace(frames, header))
                written.append(path)
    click.echo(f"wrote {len(written)} trace files to {out_dir}")


_train_opts = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 help="TrainConfig JSON; flags override."),
    click.option("--seed", type=int, default=None),
    click.option("--epochs", type=int, default=None),
    click.option("--batch-size", type=int, default=None),
    click.option("--lr", type=float, default=None),
    click.option("--tau", "temperature", type=float, default=None),
    click.option("--lambda", "distill_weight", type=float, default=None),
    click.option("--capacity", type=int, default=None),
]


def train_options(fn):
    for opt in reversed(_train_opts):
        fn = opt(fn)
    return fn


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@train_options
@_domain_guard
def pretrain(data_dir, out_path, config_path, **overrides):
    """Offline initialization: train the embedding model and build a bundle."""
    config = _build_config(config_path, **overrides)
    dataset = _load_data_dir(data_dir, config)
    bundle = learner.pretrain(dataset, config, progress=_progress_printer())
    size = learner.save_bundle(bundle, out_path)
    click.echo(f"bundle written to {out_path} ({size} bytes, "
               f"{len(dataset)} classes)")


def _progress_printer():
    def progress(phase, epoch, loss):
        click.echo(f"  {phase} epoch {epoch}: loss {loss:.4f}", err=True)
    return progress


@main.command("eval")
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--json", "as_json", is_flag=True)
@click.option("--report-dir", type=click.Path(path_type=Path),
              help="Write CSV and PNG figures here.")
@_domain_guard
def eval_cmd(bundle_path, data_dir, as_json, report_dir):
    """Evaluate a bundle on labeled traces."""
    bundle = learner.load_bundle(bundle_path)
    dataset = _load_data_dir(data_dir, bundle.config)
    rep = learner.evaluate(bundle, dataset)
    if report_dir:
        report.save_eval_report(rep, report_dir)
    if as_json:
        click.echo(json.dumps(rep.to_jsonable(), indent=2))
    else:
        click.echo(f"overall accuracy: {rep.overall_accuracy:.4f} "
                   f"({rep.count} windows)")
        for name, acc in rep.per_class_accuracy.items():
            click.echo(f"  {name}: {acc:.4f}")


def _print_forgetting(fr, as_json):
    if as_json:
        click.echo(json.dumps(fr.to_jsonable(), indent=2))
        return
    click.echo(f"new class {fr.new_class!r}: accuracy {fr.new_class_accuracy:.4f}")
    for name in fr.before:
        click.echo(f"  {name}: {fr.before[name]:.4f} -> {fr.after[name]:.4f} "
                   f"(drop {fr.drops[name]:+.4f})")
    click.echo(f"max drop: {fr.max_drop:.4f}")


def _incremental_command(mode, bundle_path, label, data_path, out_path,
                         eval_dir, as_json, report_dir, config_path, overrides):
    bundle = learner.load_bundle(bundle_path)
    config = _build_config(config_path, defaults=bundle.config.to_jsonable(),
                           **overrides)
    recordings = _load_recordings(data_path, config)
    eval_data = _load_data_dir(eval_dir, config) if eval_dir else None
    before = None
    if eval_data is not None:
        # the new label may appear in the eval dir before the model knows it
        known = {bundle.registry.get(a).name for a in bundle.registry.ids()}
        before = learner.evaluate(
            bundle, {k: v for k, v in eval_data.items() if k in known})
    op = learner.learn_class if mode == "add_class" else learner.calibrate_class
    new_bundle, fr = op(bundle, label, recordings, config,
                        progress=_progress_printer())
    if eval_data is not None:
        after = learner.evaluate(new_bundle, eval_data)
        fr = learner.forgetting_from_evals(before, after, label)
    size = learner.save_bundle(new_bundle, out_path)
    _print_forgetting(fr, as_json)
    if report_dir:
        report.save_forgetting_report(fr, report_dir)
    click.echo(f"bundle v{new_bundle.model_version} written to {out_path} "
               f"({size} bytes)", err=True)


@main.command("add-class")
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--label", required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, path_type=Path),
              required=True, help="Recording trace file or directory.")
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--eval-data", "eval_dir", type=click.Path(exists=True, path_type=Path),
              help="Held-out labeled traces; forgetting is measured on these "
                   "instead of the on-device support set.")
@click.option("--json", "as_json", is_flag=True)
@click.option("--report-dir", type=click.Path(path_type=Path))
@train_options
@_domain_guard
def add_class(bundle_path, label, data_path, out_path, eval_dir, as_json,
              report_dir, config_path, **overrides):
    """Learn a new activity from a recording; prints the forgetting report."""
    _incremental_command("add_class", bundle_path, label, data_path, out_path,
                         eval_dir, as_json, report_dir, config_path, overrides)


@main.command()
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--label", required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--eval-data", "eval_dir", type=click.Path(exists=True, path_type=Path))
@click.option("--json", "as_json", is_flag=True)
@click.option("--report-dir", type=click.Path(path_type=Path))
@train_options
@_domain_guard
def calibrate(bundle_path, label, data_path, out_path, eval_dir, as_json,
              report_dir, config_path, **overrides):
    """Replace an existing activity's exemplars with fresh data and retrain."""
    _incremental_command("calibrate", bundle_path, label, data_path, out_path,
                         eval_dir, as_json, report_dir, config_path, overrides)


@main.command()
@click.option("--bundle", "bundle_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--port", default=8787, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True,
              help="Non-loopback binds expose user data on the network.")
@click.option("--fixtures", "fixtures_dir", type=click.Path(exists=True, path_type=Path),
              help="Directory of .trace files offered for replay.")
@click.option("--console", "console_dir", type=click.Path(exists=True, path_type=Path),
              help="Static web console build to serve at /.")
@click.option("--autosave", "autosave_path", type=click.Path(path_type=Path),
              help="Persist the bundle here on shutdown.")
@_domain_guard
def serve(bundle_path, port, host, fixtures_dir, console_dir, autosave_path):
    """Run the local inference/learning service."""
    import uvicorn

    from .service import create_app

    bundle = learner.load_bundle(bundle_path)
    app = create_app(bundle, fixtures_dir=fixtures_dir,
                     console_dir=console_dir, autosave_path=autosave_path)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except SystemExit as exc:  # uvicorn exits 1 on bind failure
        raise IoExit(f"server failed to start on {host}:{port}") from exc


@main.command()
@click.option("--trace", "trace_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--target", default="http://127.0.0.1:8787", show_default=True)
@click.option("--speed", default=1.0, show_default=True,
              help="Replay speed multiplier over real time.")
@_domain_guard
def replay(trace_path, target, speed):
    """Stream a trace into a running service at a multiple of real time."""
    import requests

    _header, frames = parse_trace_with_header(trace_path.read_bytes())
    chunk = 60
    emitted = 0
    try:
        for i in range(0, len(frames), chunk):
            batch = frames[i:i + chunk]
            payload = {"frames": [
                {"timestamp_us": f.timestamp_us, "channels": f.channels.tolist()}
                for f in batch
            ]}
            resp = requests.post(f"{target}/api/frames", json=payload, timeout=10)
            resp.raise_for_status()
            emitted += resp.json().get("windows_emitted", 0)
            if speed > 0:
                time.sleep(len(batch) / DEFAULT_RATE_HZ / speed)
    except requests.RequestException as exc:
        raise IoExit(f"target unreachable: {exc}")
    click.echo(f"replayed {len(frames)} frames, {emitted} windows emitted")


if __name__ == "__main__":
    main()
