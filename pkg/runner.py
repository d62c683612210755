import functools
import logging
from concurrent.futures import ThreadPoolExecutor
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import click
import numpy as np

from lib.codec.config import CodecConfig, RDStrategy
from lib.codec.decoder import decode_sequence
from lib.codec.encoder import EncodeResult, encode_sequence
from lib.errors import CodecError, ShapeMismatch
from lib.mesh.io import load_sequence, save_sequence
from lib.mesh.metrics import frame_distortion
from lib.mesh.models import Sequence
from lib.reports import SweepRow, frame_rmse_table, rd_frame, sweep_frame, write_csv
from lib.settings import settings
from lib.synthetic import Scenario, ScenarioConfig, synthesize

logger = logging.getLogger(__name__)

SCENARIO_SUFFIXES = {".yml", ".yaml"}


def codec_errors(func):
    """Turn codec errors into a non-zero exit with the error message."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except CodecError as exc:
            logger.debug("Command failed", exc_info=True)
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc

    return wrapper


def load_input(source: str, seed: Optional[int] = None) -> Tuple[Sequence, str]:
    """A frame directory, a YAML scenario file or a bare scenario name."""
    path = Path(source)
    if path.is_dir():
        return load_sequence(path), path.name
    if path.suffix.lower() in SCENARIO_SUFFIXES:
        scenario = ScenarioConfig.load(path)
    else:
        scenario = ScenarioConfig(scenario=Scenario.parse(source).value)
    if seed is not None:
        scenario = scenario.model_copy(update={"seed": seed})
    return synthesize(scenario), scenario.kind.value


def load_codec_config(config: Optional[str], source: str) -> CodecConfig:
    if config:
        return CodecConfig.load_config(config)
    path = Path(source)
    if path.suffix.lower() in SCENARIO_SUFFIXES and path.is_file():
        return CodecConfig.load_config(path)
    if Path(settings.config_path).is_file():
        return CodecConfig.load_config()
    return CodecConfig()


def apply_overrides(cfg: CodecConfig, overrides: Dict[str, Any]) -> CodecConfig:
    """Re-validate ``cfg`` with dotted-key overrides (``None`` values are skipped)."""
    data = cfg.model_dump(by_alias=True)
    for key, value in overrides.items():
        if value is None:
            continue
        *parents, leaf = key.split(".")
        section = data
        for parent in parents:
            section = section[parent]
        section[leaf] = value
    try:
        return CodecConfig.model_validate(data)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


def mean_rmse(decoded: List, original: Sequence) -> float:
    if len(decoded) != len(original):
        raise ShapeMismatch(f"{len(decoded)} decoded vs {len(original)} original frames")
    return float(np.mean([frame_distortion(d, o) for d, o in zip(decoded, original.frames)]))


def mask_summary(result: EncodeResult, per_frame: bool) -> str:
    """Chosen masks, one per GoF (or per P-frame), joined with ``/``."""
    if per_frame:
        return "/".join(result.report.gof_masks())
    chosen: Dict[int, str] = {}
    for record in result.report.frames:
        if record.kind == "P" and record.mask is not None:
            chosen.setdefault(record.gof, record.mask)
    return "/".join(chosen[g] for g in sorted(chosen))


def parse_floats(value: str) -> List[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc


@click.group()
def main():
    """Bi-modal key-node codec for labelled dynamic mesh sequences."""


@main.command()
@click.argument("source")
@click.argument("output", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", default=None, help="Codec YAML configuration")
@click.option("--gof-size", type=int, default=None)
@click.option("--nodes", type=int, default=None, help="Target key-node count")
@click.option("--lambda", "lam", type=float, default=None, help="RD Lagrange multiplier")
@click.option("--qstep-t", type=float, default=None)
@click.option("--qstep-p", type=float, default=None)
@click.option("--seg-mode", type=click.Choice(["auto", "manual", "off"]), default=None)
@click.option("--affine-parts", default=None, help="Comma-separated body parts, e.g. Torso,LeftThigh")
@click.option("--rd-strategy", type=click.Choice([s.value for s in RDStrategy]), default=None)
@click.option("--mask", default=None, help="Force one combination mask (e.g. RT, RTSH) for every frame")
@click.option("--no-seg-corr", is_flag=True, default=False, help="Disable segmentation-guided correspondence")
@click.option("--no-pred-coding", is_flag=True, default=False, help="Code translations without prediction")
@click.option("--q", type=int, default=None, help="Influence-map neighbour count")
@click.option("--seed", type=int, default=None)
@click.option("--report", "report_path", default=None, help="Write all RD points to this CSV")
@codec_errors
def encode(
    source: str,
    output: str,
    config_path: Optional[str],
    gof_size: Optional[int],
    nodes: Optional[int],
    lam: Optional[float],
    qstep_t: Optional[float],
    qstep_p: Optional[float],
    seg_mode: Optional[str],
    affine_parts: Optional[str],
    rd_strategy: Optional[str],
    mask: Optional[str],
    no_seg_corr: bool,
    no_pred_coding: bool,
    q: Optional[int],
    seed: Optional[int],
    report_path: Optional[str],
):
    """Encode a frame directory or synthetic scenario into a .bmkn file."""
    seq, name = load_input(source, seed)
    cfg = apply_overrides(
        load_codec_config(config_path, source),
        {
            "gof_size": gof_size,
            "generator.target_count": nodes,
            "generator.seed": seed,
            "rd.lambda": lam,
            "rd.strategy": rd_strategy,
            "qstep_t": qstep_t,
            "qstep_p": qstep_p,
            "segmentation.mode": seg_mode,
            "segmentation.affine_parts": affine_parts,
            "forced_mask": mask,
            "solver.q": q,
            "toggles.seg_corr": False if no_seg_corr else None,
            "toggles.translation_predcode": False if no_pred_coding else None,
        },
    )
    result = encode_sequence(seq, cfg)
    Path(output).write_bytes(result.data)

    for record in result.report.frames:
        if record.kind == "I":
            click.echo(f"GoF {record.gof} frame {record.frame}: I-frame, {record.bytes} bytes")
        else:
            click.echo(
                f"GoF {record.gof} frame {record.frame}: mask {record.mask}, {record.mode} translations, "
                f"{record.bytes} bytes, distortion {record.distortion:.6g}"
            )
    click.echo(
        f"{name}: {len(seq)} frames, {len(result.data)} bytes ({result.report.motion_bytes} motion) -> {output}"
    )
    if report_path:
        write_csv(rd_frame(result.report), report_path)


@main.command()
@click.argument("source", type=click.Path(exists=True, dir_okay=False))
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--check", "check_dir", default=None, help="Original frames to compare against")
@click.option("--csv", "csv_path", default=None, help="Write the per-frame RMSE to this CSV")
@codec_errors
def decode(source: str, output_dir: str, check_dir: Optional[str], csv_path: Optional[str]):
    """Decode a .bmkn file into per-frame meshes."""
    seq = decode_sequence(Path(source).read_bytes())
    save_sequence(seq, output_dir)
    click.echo(f"Decoded {len(seq)} frames to {output_dir}")
    if check_dir is None:
        return
    original, _ = load_input(check_dir)
    if len(original) != len(seq):
        raise ShapeMismatch(f"{len(seq)} decoded vs {len(original)} original frames")
    rmse = [frame_distortion(d, o) for d, o in zip(seq.frames, original.frames)]
    for index, value in enumerate(rmse):
        click.echo(f"frame {index}: rmse {value:.12g}")
    if csv_path:
        write_csv(frame_rmse_table(rmse), csv_path)


@main.command(name="synthesize")
@click.argument("scenario")
@click.argument("output_dir", type=click.Path(file_okay=False))
@click.option("--frames", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--resolution", type=int, default=None, help="Ellipsoid bands per body part")
@click.option("--amplitude", type=float, default=None, help="Torso oscillation amplitude (swish)")
@click.option("--velocity", type=float, nargs=3, default=None, help="Per-frame translation (drift)")
@codec_errors
def synthesize_cmd(
    scenario: str,
    output_dir: str,
    frames: Optional[int],
    seed: Optional[int],
    resolution: Optional[int],
    amplitude: Optional[float],
    velocity: Optional[Tuple[float, float, float]],
):
    """Write a synthetic labelled sequence (walker, swish, drift or a YAML scenario file)."""
    if Path(scenario).suffix.lower() in SCENARIO_SUFFIXES:
        cfg = ScenarioConfig.load(scenario)
    else:
        cfg = ScenarioConfig(scenario=Scenario.parse(scenario).value)
    updates = {
        "frames": frames,
        "seed": seed,
        "resolution": resolution,
        "amplitude": amplitude,
        "velocity": tuple(velocity) if velocity else None,
    }
    try:
        cfg = ScenarioConfig.model_validate(
            {**cfg.model_dump(), **{k: v for k, v in updates.items() if v is not None}}
        )
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc
    seq = synthesize(cfg)
    save_sequence(seq, output_dir)
    click.echo(f"{cfg.kind.value}: {len(seq)} frames, {seq.frames[0].vertex_count} vertices -> {output_dir}")


@main.command()
@click.argument("source")
@click.option("--config", "config_path", default=None, help="Codec YAML configuration")
@click.option("--lambdas", default="1e-6,1e-4,1e-2", help="Comma-separated lambda values")
@click.option("--qsteps", default="1e-3", help="Comma-separated quantization steps (T and P)")
@click.option("--nodes", "node_counts", default="24", help="Comma-separated key-node counts")
@click.option("--seed", type=int, default=None)
@click.option("--output", "output_path", default="sweep.csv", help="CSV file to write")
@codec_errors
def sweep(
    source: str,
    config_path: Optional[str],
    lambdas: str,
    qsteps: str,
    node_counts: str,
    seed: Optional[int],
    output_path: str,
):
    """Encode over a (lambda, qstep, nodes) grid and write rate/distortion rows."""
    seq, name = load_input(source, seed)
    base = load_codec_config(config_path, source)
    per_frame = base.rd.strategy == RDStrategy.PER_FRAME
    grid = list(product(parse_floats(lambdas), parse_floats(qsteps), [int(n) for n in parse_floats(node_counts)]))

    def run(point: Tuple[float, float, int]) -> SweepRow:
        lam, qstep, nodes = point
        cfg = apply_overrides(
            base,
            {
                "rd.lambda": lam,
                "qstep_t": qstep,
                "qstep_p": qstep,
                "generator.target_count": nodes,
                "generator.seed": seed,
            },
        )
        result = encode_sequence(seq, cfg)
        row = SweepRow(
            scenario=name,
            lambda_=lam,
            qstep_t=cfg.qstep_t,
            qstep_p=cfg.qstep_p,
            nodes=nodes,
            mask=mask_summary(result, per_frame),
            rate_bytes=len(result.data),
            motion_bytes=result.report.motion_bytes,
            rmse=mean_rmse(result.reconstructed, seq),
        )
        logger.info("Sweep point lambda=%g qstep=%g nodes=%d: %d bytes", lam, qstep, nodes, row.rate_bytes)
        return row

    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        rows = list(pool.map(run, grid))
    df = sweep_frame(rows)
    write_csv(df, output_path)
    click.echo(df.to_string(index=False))


@main.command()
@click.argument("first")
@click.argument("second")
@codec_errors
def metrics(first: str, second: str):
    """Per-frame RMSE (normalised by the bbox diagonal of SECOND) between two sequences."""
    a, _ = load_input(first)
    b, _ = load_input(second)
    if len(a) != len(b):
        raise ShapeMismatch(f"{len(a)} vs {len(b)} frames")
    rmse = [frame_distortion(x, y) for x, y in zip(a.frames, b.frames)]
    for index, value in enumerate(rmse):
        click.echo(f"frame {index}: rmse {value:.12g}")
    click.echo(f"mean rmse {float(np.mean(rmse)):.12g}")


if __name__ == "__main__":
    main()
