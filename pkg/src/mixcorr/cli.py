"""Command-line front end for every pipeline in the package.

All physical quantities on the command line carry explicit units
("0.56pi", "450ps", "0.8/ns"); bare numbers are rejected except for an
exact zero.  Every run writes a resolved-config JSON beside its outputs,
and re-running from that file reproduces the outputs byte for byte.

Exit codes: 0 ok, 1 usage, 2 runtime; tag-file handling refines the
runtime class into 3 (I/O), 4 (malformed file), 5 (empty channel).
"""

from __future__ import annotations

import json
import math
import re
import sys
from pathlib import Path

import click
from click.core import ParameterSource

from .correlators import (
    DetectorRole,
    MixConfig,
    default_delay_grid,
    g2,
    g2_terms_coco,
    g2_terms_crossco,
    g3_map,
    gn_zero_delay,
    irf_convolve,
)
from .dynamics import SystemParams
from .sweeps import OBSERVABLES, SweepSpec, contours_to_csv, iso_contour, run_sweep
from .tagcorr import (
    EmptyChannelError,
    TagFileError,
    correlate2,
    correlate3,
    read_tags,
    write_tags,
)
from .trajectories import (
    DetectorChannelSpec,
    derive_lo_amplitude,
    simulate_stream,
)

__all__ = ["cli", "main"]

_UNSIGNED = r"(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_NUMBER = f"[-+]?{_UNSIGNED}"
_TIME_SCALE_NS = {"ps": 1e-3, "ns": 1.0, "us": 1e3, "ms": 1e6}
_RATE_SCALE_NS = {"/ps": 1e3, "/ns": 1.0, "/us": 1e-3, "/ms": 1e-6}


def _is_zero(text: str) -> bool:
    try:
        return float(text) == 0.0
    except ValueError:
        return False


def parse_time_ns(text: str) -> float:
    """"450ps" / "0.45ns" / "1us" -> nanoseconds; bare nonzero rejected."""
    s = text.strip().lower().replace(" ", "")
    if _is_zero(s):
        return 0.0
    m = re.fullmatch(f"({_NUMBER})(ps|ns|us|ms)", s)
    if not m:
        raise ValueError(
            f"time needs an explicit unit (ps, ns, us, ms): got {text!r}"
        )
    return float(m.group(1)) * _TIME_SCALE_NS[m.group(2)]


def parse_angular_rad_ns(text: str) -> float:
    """"0.56pi" / "1.76rad/ns" -> rad/ns; bare nonzero rejected."""
    s = text.strip().lower().replace(" ", "")
    if _is_zero(s):
        return 0.0
    m = re.fullmatch(f"([-+]?)({_UNSIGNED})?pi", s)
    if m:
        sign = -1.0 if m.group(1) == "-" else 1.0
        return sign * (float(m.group(2)) if m.group(2) else 1.0) * math.pi
    m = re.fullmatch(f"({_NUMBER})rad/ns", s)
    if m:
        return float(m.group(1))
    raise ValueError(
        "angular frequency needs explicit units — multiples of pi "
        f"('0.56pi') or 'rad/ns': got {text!r}"
    )


def parse_phase_rad(text: str) -> float:
    """"pi" / "0.5pi" / "1.57rad" -> radians; bare nonzero rejected."""
    s = text.strip().lower().replace(" ", "")
    if _is_zero(s):
        return 0.0
    m = re.fullmatch(f"([-+]?)({_UNSIGNED})?pi", s)
    if m:
        sign = -1.0 if m.group(1) == "-" else 1.0
        return sign * (float(m.group(2)) if m.group(2) else 1.0) * math.pi
    m = re.fullmatch(f"({_NUMBER})rad", s)
    if m:
        return float(m.group(1))
    raise ValueError(
        "phase needs explicit units — multiples of pi ('pi', '0.5pi') "
        f"or 'rad': got {text!r}"
    )


def parse_rate_per_ns(text: str) -> float:
    """"0.8/ns" / "200/us" -> events per ns; bare nonzero rejected."""
    s = text.strip().lower().replace(" ", "")
    if _is_zero(s):
        return 0.0
    m = re.fullmatch(f"({_NUMBER})(/ps|/ns|/us|/ms)", s)
    if not m:
        raise ValueError(
            f"rate needs an explicit unit (/ps, /ns, /us, /ms): got {text!r}"
        )
    return float(m.group(1)) * _RATE_SCALE_NS[m.group(2)]


class _Unit(click.ParamType):
    def __init__(self, name, parser):
        self.name = name
        self._parser = parser

    def convert(self, value, param, ctx):
        if isinstance(value, (int, float)):
            return float(value)  # pre-resolved (config file reload)
        try:
            return self._parser(value)
        except ValueError as exc:
            self.fail(str(exc), param, ctx)


TIME = _Unit("time", parse_time_ns)
ANGULAR = _Unit("angular frequency", parse_angular_rad_ns)
PHASE = _Unit("phase", parse_phase_rad)
RATE = _Unit("rate", parse_rate_per_ns)

_ROLES = {"cross": DetectorRole.CROSS, "co": DetectorRole.CO}


def _parse_roles(text: str, count: int):
    parts = [p.strip().lower() for p in text.split(",")]
    if len(parts) != count or any(p not in _ROLES for p in parts):
        raise click.UsageError(
            f"--roles expects {count} comma-separated entries from "
            f"{{cross, co}}: got {text!r}"
        )
    return tuple(_ROLES[p] for p in parts)


# --------------------------------------------------------------------------
# config plumbing


def _load_config(path, subcommand: str) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("subcommand") != subcommand:
        raise click.UsageError(
            f"config file is for subcommand {payload.get('subcommand')!r}, "
            f"not {subcommand!r}"
        )
    return payload["parameters"]


# config keys whose click parameter has a different python name
_PARAM_ALIASES = {"format": "fmt", "input": "input_path", "bin": "bin_ns"}


def _merge(ctx: click.Context, cfg: dict, **values) -> dict:
    """Explicit command-line flags win; then config file; then defaults."""
    out = {}
    for name, val in values.items():
        source = ctx.get_parameter_source(_PARAM_ALIASES.get(name, name))
        if source == ParameterSource.COMMANDLINE or name not in cfg:
            out[name] = val
        else:
            out[name] = cfg[name]
    return out


def _write_config(out_dir: Path, stem: str, subcommand: str, cfg: dict):
    path = out_dir / f"{stem}.config.json"
    with open(path, "w") as fh:
        json.dump(
            {"subcommand": subcommand, "parameters": cfg},
            fh,
            indent=1,
            sort_keys=True,
        )
        fh.write("\n")
    return path


def _out_dir(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _params_from(cfg: dict) -> SystemParams:
    return SystemParams(
        rabi_frequency=cfg["rabi"],
        lifetime=cfg["t1"],
        pure_dephasing_rate=cfg["dephasing"],
        detuning=cfg["detuning"],
    )


def _mix_from(cfg: dict) -> MixConfig:
    return MixConfig(f_mix=cfg["fmix"], phase=cfg["phase"])


def _emit(obj, out_dir: Path, stem: str, fmt: str) -> Path:
    path = out_dir / f"{stem}.{fmt}"
    if fmt == "csv":
        obj.to_csv(path)
    else:
        obj.to_json(path)
    click.echo(f"wrote {path}")
    return path


def _require(cfg: dict, key: str, flag: str):
    if cfg[key] is None:
        raise click.UsageError(f"{flag} is required (flag or --config)")


# --------------------------------------------------------------------------
# core runners (shared between the subcommands and `repro`)


def _run_g2(cfg: dict, out_dir: Path, stem: str = "g2"):
    params = _params_from(cfg)
    mix = _mix_from(cfg)
    role_1, role_2 = _parse_roles(cfg["roles"], 2)
    delays = default_delay_grid(cfg["span"], cfg["points"], two_sided=True)
    curve = g2(params, mix, role_1, role_2, delays, cfg["normalization"])
    if cfg["irf_ps"]:
        curve = irf_convolve(curve, cfg["irf_ps"])
    _emit(curve, out_dir, stem, cfg["format"])
    _write_config(out_dir, stem, "g2", cfg)
    return curve


def _run_g2_terms(cfg: dict, out_dir: Path, stem: str = "g2_terms"):
    params = _params_from(cfg)
    mix = _mix_from(cfg)
    roles = _parse_roles(cfg["roles"], 2)
    delays = default_delay_grid(cfg["span"], cfg["points"], two_sided=False)
    if roles == (DetectorRole.CROSS, DetectorRole.CO):
        curve = g2_terms_crossco(params, mix, delays, cfg["normalization"])
    elif roles == (DetectorRole.CO, DetectorRole.CO):
        curve = g2_terms_coco(params, mix, delays, cfg["normalization"])
    else:
        raise click.UsageError(
            "--roles must be 'cross,co' or 'co,co' for the term "
            "decomposition (a bare cross,cross curve has no mixing terms)"
        )
    if cfg["irf_ps"]:
        curve = irf_convolve(curve, cfg["irf_ps"])
    _emit(curve, out_dir, stem, cfg["format"])
    _write_config(out_dir, stem, "g2-terms", cfg)
    return curve


def _run_g3(cfg: dict, out_dir: Path, stem: str = "g3"):
    params = _params_from(cfg)
    mix = _mix_from(cfg)
    roles = _parse_roles(cfg["roles"], 3)
    delays = default_delay_grid(cfg["span"], cfg["points"], two_sided=True)
    result = g3_map(params, mix, roles, delays, delays, cfg["normalization"])
    _emit(result, out_dir, stem, cfg["format"])
    _write_config(out_dir, stem, "g3", cfg)
    return result


def _run_gn0(cfg: dict, out_dir: Path, stem: str = "gn0"):
    params = _params_from(cfg)
    mix = _mix_from(cfg)
    value = gn_zero_delay(cfg["order"], params, mix)
    path = out_dir / f"{stem}.{cfg['format']}"
    if cfg["format"] == "csv":
        path.write_text(f"order,value\n{cfg['order']},{value:.17g}\n")
    else:
        with open(path, "w") as fh:
            json.dump({"order": cfg["order"], "value": value}, fh, indent=1)
            fh.write("\n")
    click.echo(f"g{cfg['order']}(0) = {value:.12g}")
    click.echo(f"wrote {path}")
    _write_config(out_dir, stem, "gn0", cfg)
    return value


def _run_sweep(cfg: dict, out_dir: Path, stem: str = "sweep"):
    spec = SweepSpec.default_map(
        phase=cfg["phase"],
        observable=cfg["observable"],
        f_points=cfg["f_points"],
        rabi_points=cfg["rabi_points"],
        f_max=cfg["f_max"],
        rabi_min=cfg["rabi_min"],
        rabi_max=cfg["rabi_max"],
        rabi_spacing=cfg["rabi_spacing"],
        lifetime=cfg["t1"],
        order=cfg["order"],
    )
    result = run_sweep(spec)
    _emit(result, out_dir, stem, cfg["format"])
    if cfg["contour"] is not None:
        contours = iso_contour(result, cfg["contour"])
        cpath = out_dir / f"{stem}_contour.csv"
        contours_to_csv(contours, cpath)
        click.echo(f"wrote {cpath} ({sum(len(c) for c in contours)} points)")
    _write_config(out_dir, stem, "sweep", cfg)
    return result


def _channel_specs(cfg: dict, params: SystemParams, mix: MixConfig):
    specs = []
    for idx, text in enumerate(cfg["channels"]):
        role_txt, _, arg = text.strip().lower().partition(":")
        if role_txt == "laser":
            if not arg:
                raise click.UsageError(
                    "laser channel needs a click rate: laser:<rate per ns>"
                )
            try:
                rate = float(arg)
            except ValueError:
                raise click.UsageError(
                    f"laser channel rate must be a number: got {arg!r}"
                ) from None
            specs.append(
                DetectorChannelSpec(
                    id=idx,
                    role=DetectorRole.CO,
                    collection_weight=0.0,
                    lo_amplitude=math.sqrt(rate),
                    jitter_ps=cfg["jitter_ps"],
                    dead_time_ps=cfg["dead_time_ps"],
                    dark_rate_per_ns=cfg["dark_rate"],
                )
            )
        elif role_txt in _ROLES:
            if not arg:
                raise click.UsageError(
                    f"channel {text!r} needs a collection weight: "
                    f"{role_txt}:<weight>"
                )
            try:
                weight = float(arg)
            except ValueError:
                raise click.UsageError(
                    f"collection weight must be a number: got {arg!r}"
                ) from None
            lo = (
                derive_lo_amplitude(params, mix, weight)
                if role_txt == "co"
                else 0.0
            )
            specs.append(
                DetectorChannelSpec(
                    id=idx,
                    role=_ROLES[role_txt],
                    collection_weight=weight,
                    lo_amplitude=lo,
                    jitter_ps=cfg["jitter_ps"],
                    dead_time_ps=cfg["dead_time_ps"],
                    dark_rate_per_ns=cfg["dark_rate"],
                )
            )
        else:
            raise click.UsageError(
                f"unknown channel role in {text!r}; expected "
                "cross:<w>, co:<w>, or laser:<rate>"
            )
    return tuple(specs)


def _run_simulate(cfg: dict, out_dir: Path, stem: str = "stream"):
    params = _params_from(cfg)
    mix = _mix_from(cfg)
    specs = _channel_specs(cfg, params, mix)
    stream = simulate_stream(
        params,
        specs,
        cfg["duration"],
        cfg["seed"],
        batch_ns=cfg["batch"],
        workers=cfg["workers"],
    )
    path = out_dir / f"{stem}.qtg"
    write_tags(stream, path)
    for cid, n in sorted(stream.counts().items()):
        rate = n / stream.duration_ns
        click.echo(f"channel {cid}: {n} clicks ({rate:.4g}/ns)")
    click.echo(f"wrote {path}")
    _write_config(out_dir, stem, "simulate", cfg)
    return stream


def _run_correlate(cfg: dict, out_dir: Path, stem: str = "correlate"):
    stream = read_tags(cfg["input"])
    ids = [int(p) for p in str(cfg["channels"]).split(",")]
    bin_ps = int(round(cfg["bin"] * 1000))
    max_ps = int(round(cfg["max_delay"] * 1000))
    if len(ids) == 2:
        hist = correlate2(
            stream, ids[0], ids[1], bin_ps, max_ps,
            normalization=cfg["normalization"], workers=cfg["workers"],
        )
        if cfg["rebin"] != 1:
            hist = hist.rebin(cfg["rebin"])
    elif len(ids) == 3:
        if cfg["rebin"] != 1:
            raise click.UsageError(
                "--rebin applies to pair histograms only"
            )
        hist = correlate3(
            stream, ids[0], ids[1], ids[2], bin_ps, max_ps,
            normalization=cfg["normalization"], workers=cfg["workers"],
        )
    else:
        raise click.UsageError(
            f"--channels expects 2 or 3 comma-separated ids: got "
            f"{cfg['channels']!r}"
        )
    _emit(hist, out_dir, stem, cfg["format"])
    _write_config(out_dir, stem, "correlate", cfg)
    return hist


# --------------------------------------------------------------------------
# command definitions


def _common_emitter_options(fn):
    decorators = [
        click.option(
            "--rabi", type=ANGULAR, default=None,
            help="drive Rabi frequency, e.g. '0.56pi' or '1.76rad/ns'",
        ),
        click.option(
            "--t1", type=TIME, default="450ps", show_default=True,
            help="radiative lifetime, e.g. '450ps'",
        ),
        click.option(
            "--dephasing", type=RATE, default="0",
            help="pure dephasing rate, e.g. '0.8/ns'",
        ),
        click.option(
            "--detuning", type=ANGULAR, default="0",
            help="laser-emitter detuning, e.g. '0.2pi' or '1rad/ns'",
        ),
        click.option("--fmix", type=float, default=0.0, show_default=True,
                     help="laser-to-emission field mixing ratio"),
        click.option("--phase", type=PHASE, default="0",
                     help="mixing phase, e.g. 'pi' or '1.57rad'"),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


def _common_output_options(fn):
    decorators = [
        click.option("--out", default=".", show_default=True,
                     help="output directory"),
        click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
                     default="csv", show_default=True),
        click.option("--config", "config_path", default=None,
                     help="resolved-config JSON from a previous run"),
    ]
    for dec in reversed(decorators):
        fn = dec(fn)
    return fn


@click.group()
@click.version_option(package_name="artifact", prog_name="mixcorr")
def cli():
    """Correlation functions of laser-mixed resonance fluorescence.

    Theory curves come from the quantum regression pipeline; `simulate`
    and `correlate` form the independent Monte-Carlo click-stream
    pipeline.  Quantities carry explicit units: '0.56pi', '450ps',
    '0.8/ns'.
    """


@cli.command("g2")
@_common_emitter_options
@click.option("--roles", default="cross,cross", show_default=True,
              help="detector roles, e.g. 'cross,co'")
@click.option("--span", type=TIME, default="5ns", show_default=True,
              help="delay half-range")
@click.option("--points", type=int, default=2001, show_default=True,
              help="grid points (odd; two-sided)")
@click.option("--normalization",
              type=click.Choice(["intensity-product", "tail", "none"]),
              default="intensity-product", show_default=True)
@click.option("--irf", "irf_ps", type=TIME, default=None,
              help="Gaussian detector response FWHM, e.g. '250ps'")
@_common_output_options
@click.pass_context
def cmd_g2(ctx, rabi, t1, dephasing, detuning, fmix, phase, roles, span,
           points, normalization, irf_ps, out, fmt, config_path):
    """Two-photon coincidence curve g2(tau) between two detector roles."""
    base = _load_config(config_path, "g2") if config_path else {}
    cfg = _merge(
        ctx, base,
        rabi=rabi, t1=t1, dephasing=dephasing, detuning=detuning,
        fmix=fmix, phase=phase, roles=roles, span=span, points=points,
        normalization=normalization,
        irf_ps=irf_ps if irf_ps is None else irf_ps * 1000,
        format=fmt,
    )
    _require(cfg, "rabi", "--rabi")
    if cfg["points"] < 3 or cfg["points"] % 2 == 0:
        raise click.UsageError("--points must be odd and at least 3")
    _run_g2(cfg, _out_dir(out))


@cli.command("g2-terms")
@_common_emitter_options
@click.option("--roles", default="cross,co", show_default=True,
              help="'cross,co' or 'co,co'")
@click.option("--span", type=TIME, default="5ns", show_default=True)
@click.option("--points", type=int, default=1001, show_default=True,
              help="grid points (one-sided, tau >= 0)")
@click.option("--normalization",
              type=click.Choice(["intensity-product", "tail", "none"]),
              default="intensity-product", show_default=True)
@click.option("--irf", "irf_ps", type=TIME, default=None,
              help="Gaussian detector response FWHM, e.g. '250ps'")
@_common_output_options
@click.pass_context
def cmd_g2_terms(ctx, rabi, t1, dephasing, detuning, fmix, phase, roles,
                 span, points, normalization, irf_ps, out, fmt, config_path):
    """g2 split into its physical channels (emitter, laser, interference)."""
    base = _load_config(config_path, "g2-terms") if config_path else {}
    cfg = _merge(
        ctx, base,
        rabi=rabi, t1=t1, dephasing=dephasing, detuning=detuning,
        fmix=fmix, phase=phase, roles=roles, span=span, points=points,
        normalization=normalization,
        irf_ps=irf_ps if irf_ps is None else irf_ps * 1000,
        format=fmt,
    )
    _require(cfg, "rabi", "--rabi")
    if cfg["points"] < 2:
        raise click.UsageError("--points must be at least 2")
    _run_g2_terms(cfg, _out_dir(out))


@cli.command("g3")
@_common_emitter_options
@click.option("--roles", default="cross,cross,cross", show_default=True,
              help="three detector roles, e.g. 'cross,co,co'")
@click.option("--span", type=TIME, default="5ns", show_default=True)
@click.option("--points", type=int, default=201, show_default=True,
              help="grid points per axis (odd; two-sided)")
@click.option("--normalization",
              type=click.Choice(["intensity-product", "tail", "none"]),
              default="intensity-product", show_default=True)
@_common_output_options
@click.pass_context
def cmd_g3(ctx, rabi, t1, dephasing, detuning, fmix, phase, roles, span,
           points, normalization, out, fmt, config_path):
    """Three-photon coincidence map over (tau_12, tau_13)."""
    base = _load_config(config_path, "g3") if config_path else {}
    cfg = _merge(
        ctx, base,
        rabi=rabi, t1=t1, dephasing=dephasing, detuning=detuning,
        fmix=fmix, phase=phase, roles=roles, span=span, points=points,
        normalization=normalization, format=fmt,
    )
    _require(cfg, "rabi", "--rabi")
    if cfg["points"] < 3 or cfg["points"] % 2 == 0:
        raise click.UsageError("--points must be odd and at least 3")
    _run_g3(cfg, _out_dir(out))


@cli.command("gn0")
@_common_emitter_options
@click.option("--order", type=int, default=2, show_default=True,
              help="correlation order n for g^n(0)")
@_common_output_options
@click.pass_context
def cmd_gn0(ctx, rabi, t1, dephasing, detuning, fmix, phase, order, out,
            fmt, config_path):
    """Closed-form zero-delay co-polarized correlation of any order."""
    base = _load_config(config_path, "gn0") if config_path else {}
    cfg = _merge(
        ctx, base,
        rabi=rabi, t1=t1, dephasing=dephasing, detuning=detuning,
        fmix=fmix, phase=phase, order=order, format=fmt,
    )
    _require(cfg, "rabi", "--rabi")
    if cfg["order"] < 1:
        raise click.UsageError("--order must be a positive integer")
    _run_gn0(cfg, _out_dir(out))


@cli.command("sweep")
@click.option("--observable", type=click.Choice(list(OBSERVABLES)),
              default="g2_crossco_zero", show_default=True)
@click.option("--phase", type=PHASE, default="pi", show_default=True)
@click.option("--t1", type=TIME, default="450ps", show_default=True)
@click.option("--f-points", type=int, default=61, show_default=True)
@click.option("--rabi-points", type=int, default=61, show_default=True)
@click.option("--f-max", type=float, default=3.0, show_default=True)
@click.option("--rabi-min", type=ANGULAR, default="0.1pi", show_default=True)
@click.option("--rabi-max", type=ANGULAR, default="4pi", show_default=True)
@click.option("--rabi-spacing", type=click.Choice(["log", "linear"]),
              default="log", show_default=True)
@click.option("--order", type=int, default=2, show_default=True,
              help="correlation order (gn_zero observable)")
@click.option("--contour", type=float, default=None,
              help="also extract the iso-contour at this level")
@_common_output_options
@click.pass_context
def cmd_sweep(ctx, observable, phase, t1, f_points, rabi_points, f_max,
              rabi_min, rabi_max, rabi_spacing, order, contour, out, fmt,
              config_path):
    """Zero-delay correlation over the (mixing ratio, drive) plane."""
    base = _load_config(config_path, "sweep") if config_path else {}
    cfg = _merge(
        ctx, base,
        observable=observable, phase=phase, t1=t1, f_points=f_points,
        rabi_points=rabi_points, f_max=f_max, rabi_min=rabi_min,
        rabi_max=rabi_max, rabi_spacing=rabi_spacing, order=order,
        contour=contour, format=fmt,
    )
    _run_sweep(cfg, _out_dir(out))


@cli.command("simulate")
@_common_emitter_options
@click.option("--duration", type=TIME, default=None,
              help="stream duration, e.g. '450us'")
@click.option("--channel", "channels", multiple=True,
              help="detector port, repeatable: cross:<weight>, co:<weight>, "
                   "or laser:<rate per ns>")
@click.option("--jitter", "jitter_ps", type=TIME, default="0",
              help="Gaussian timing jitter FWHM-equivalent sigma, e.g. "
                   "'30ps' (applied to every channel)")
@click.option("--dead-time", "dead_time_ps", type=TIME, default="0",
              help="non-paralyzable dead time, e.g. '2ns'")
@click.option("--dark-rate", type=RATE, default="0",
              help="dark count rate, e.g. '0.001/ns'")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--batch", type=TIME, default=None,
              help="trajectory batch length (default 1e4 lifetimes)")
@_common_output_options
@click.pass_context
def cmd_simulate(ctx, rabi, t1, dephasing, detuning, fmix, phase, duration,
                 channels, jitter_ps, dead_time_ps, dark_rate, seed, workers,
                 batch, out, fmt, config_path):
    """Monte-Carlo click-stream simulation, written as a binary tag file."""
    base = _load_config(config_path, "simulate") if config_path else {}
    cfg = _merge(
        ctx, base,
        rabi=rabi, t1=t1, dephasing=dephasing, detuning=detuning,
        fmix=fmix, phase=phase, duration=duration, channels=list(channels),
        jitter_ps=jitter_ps * 1000, dead_time_ps=dead_time_ps * 1000,
        dark_rate=dark_rate, seed=seed, workers=workers, batch=batch,
        format=fmt,
    )
    _require(cfg, "rabi", "--rabi")
    _require(cfg, "duration", "--duration")
    if not cfg["channels"]:
        raise click.UsageError(
            "at least one --channel is required, e.g. --channel cross:0.5"
        )
    _run_simulate(cfg, _out_dir(out))


@cli.command("correlate")
@click.option("--input", "input_path", required=False, default=None,
              help="binary tag file to correlate")
@click.option("--channels", default="0,1", show_default=True,
              help="2 ids for a pair histogram, 3 for a triple map")
@click.option("--bin", "bin_ns", type=TIME, default="10ps",
              show_default=True, help="histogram bin width")
@click.option("--max-delay", type=TIME, default="10ns", show_default=True)
@click.option("--normalization",
              type=click.Choice(["tail", "uncorrelated", "none"]),
              default="tail", show_default=True)
@click.option("--rebin", type=int, default=1, show_default=True,
              help="merge this many adjacent bins (odd)")
@click.option("--workers", type=int, default=1, show_default=True)
@_common_output_options
@click.pass_context
def cmd_correlate(ctx, input_path, channels, bin_ns, max_delay,
                  normalization, rebin, workers, out, fmt, config_path):
    """Coincidence histogram from a recorded tag file."""
    base = _load_config(config_path, "correlate") if config_path else {}
    cfg = _merge(
        ctx, base,
        input=input_path, channels=channels, bin=bin_ns,
        max_delay=max_delay, normalization=normalization, rebin=rebin,
        workers=workers, format=fmt,
    )
    _require(cfg, "input", "--input")
    _run_correlate(cfg, _out_dir(out))


# --------------------------------------------------------------------------
# canned end-to-end runs


def _base_cfg(**overrides):
    cfg = {
        "rabi": 0.56 * math.pi,
        "t1": 0.45,
        "dephasing": 0.0,
        "detuning": 0.0,
        "fmix": 0.0,
        "phase": 0.0,
        "roles": "cross,cross",
        "span": 5.0,
        "points": 2001,
        "normalization": "intensity-product",
        "irf_ps": None,
        "format": "csv",
    }
    cfg.update(overrides)
    return cfg


def _repro_antibunching(out_dir):
    """Plain and drive-washed-out antibunching curves."""
    _run_g2(_base_cfg(), out_dir, "g2_weak_drive")
    _run_g2(_base_cfg(rabi=3.3 * math.pi), out_dir, "g2_strong_drive")
    _run_g2(
        _base_cfg(rabi=3.3 * math.pi, irf_ps=250.0),
        out_dir,
        "g2_strong_drive_irf",
    )


def _repro_crossco(out_dir):
    """Cross-co bunching curve and its channel decomposition."""
    mixed = _base_cfg(
        rabi=0.3 * math.pi, fmix=1.0, phase=math.pi, roles="cross,co"
    )
    _run_g2(mixed, out_dir, "g2_crossco")
    _run_g2_terms(dict(mixed, points=1001), out_dir, "g2_crossco_terms")


def _repro_coco(out_dir):
    """Co-co superbunching curve and its five-channel decomposition."""
    mixed = _base_cfg(
        rabi=0.3 * math.pi, fmix=1.0, phase=math.pi, roles="co,co"
    )
    _run_g2(mixed, out_dir, "g2_coco")
    _run_g2_terms(dict(mixed, points=1001), out_dir, "g2_coco_terms")


def _sweep_cfg(**overrides):
    cfg = {
        "observable": "g2_crossco_zero",
        "phase": math.pi,
        "t1": 0.45,
        "f_points": 61,
        "rabi_points": 61,
        "f_max": 3.0,
        "rabi_min": 0.1 * math.pi,
        "rabi_max": 4.0 * math.pi,
        "rabi_spacing": "log",
        "order": 2,
        "contour": None,
        "format": "csv",
    }
    cfg.update(overrides)
    return cfg


def _repro_phase_maps(out_dir):
    """Bunching-control maps for in-phase and opposed mixing."""
    _run_sweep(_sweep_cfg(phase=0.0), out_dir, "sweep_phase0")
    _run_sweep(_sweep_cfg(contour=1.0), out_dir, "sweep_phasepi")


def _repro_triples(out_dir):
    """Three-photon maps: bare antibunching and mixed diagonal bunching."""
    _run_g3(
        _base_cfg(roles="cross,cross,cross", points=201),
        out_dir,
        "g3_cross3",
    )
    _run_g3(
        _base_cfg(
            rabi=0.3 * math.pi, fmix=1.0, phase=math.pi,
            roles="cross,co,co", points=201,
        ),
        out_dir,
        "g3_crosscoco",
    )


def _repro_streams(out_dir):
    """A short simulated HBT run pushed through the tag correlator."""
    sim = {
        "rabi": 0.56 * math.pi,
        "t1": 0.45,
        "dephasing": 0.0,
        "detuning": 0.0,
        "fmix": 0.0,
        "phase": 0.0,
        "duration": 45_000.0,
        "channels": ["cross:0.5", "cross:0.5"],
        "jitter_ps": 0.0,
        "dead_time_ps": 0.0,
        "dark_rate": 0.0,
        "seed": 7,
        "workers": 1,
        "batch": None,
        "format": "csv",
    }
    _run_simulate(sim, out_dir, "hbt_stream")
    cor = {
        "input": str(out_dir / "hbt_stream.qtg"),
        "channels": "0,1",
        "bin": 0.05,
        "max_delay": 5.0,
        "normalization": "tail",
        "rebin": 1,
        "workers": 1,
        "format": "csv",
    }
    _run_correlate(cor, out_dir, "hbt_histogram")


_REPRO_STAGES = {
    "antibunching": _repro_antibunching,
    "crossco": _repro_crossco,
    "coco": _repro_coco,
    "phase-maps": _repro_phase_maps,
    "triples": _repro_triples,
    "streams": _repro_streams,
}


@cli.command("repro")
@click.option("--stage",
              type=click.Choice(["all", *_REPRO_STAGES]),
              default="all", show_default=True,
              help="which canned study to run")
@click.option("--out", default="repro", show_default=True,
              help="output directory root")
def cmd_repro(stage, out):
    """Run the canned end-to-end studies and write figure-ready files.

    Each stage writes its curves/maps plus resolved configs that can be
    replayed through the matching subcommand.
    """
    stages = list(_REPRO_STAGES) if stage == "all" else [stage]
    for name in stages:
        stage_dir = _out_dir(Path(out) / name.replace("-", "_"))
        click.echo(f"== {name} ==")
        _REPRO_STAGES[name](stage_dir)


# --------------------------------------------------------------------------
# entry point with mapped exit codes


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except TagFileError as exc:
        click.echo(f"tag file format error: {exc}", err=True)
        return 4
    except EmptyChannelError as exc:
        click.echo(f"empty channel: {exc}", err=True)
        return 5
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return 3
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
