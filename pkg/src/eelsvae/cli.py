"""Command-line front end: gen, inject, train, reconstruct, detect, eval, sweep, latent-sim.

Settings come from a ``key = value`` config file, then ``--set key=value``
overrides, then ``--seed``. Every run writes the fully resolved settings to
``config.resolved`` next to its outputs. Exit codes: 0 success, 1 runtime
error, 2 config error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as kv
from . import cvae, datacube, detect, latentdiag, pipeline, synth
from .errors import ConfigError, EelsVaeError
from .pgm import read_mask, write_heatmap, write_mask

log = logging.getLogger("eelsvae")

SNAPSHOT = "config.resolved"

# Keys (with defaults; ... = required) per subcommand. Values are strings as
# they would appear in a config file.
_SEED = {"seed": "0"}
_DETECT = {"window_eV": "690, 730", "bins": str(detect.DEFAULT_BINS),
           "gamma": str(detect.DEFAULT_GAMMA)}
_MODEL_IN = {"model": ...}

KEYS: dict[str, dict] = {
    "gen": {"width": ..., "height": ..., **_SEED,
            **{k: None for k in synth.MODEL_KEYS}, **{k: None for k in synth.AXIS_KEYS}},
    "inject": {"input": ..., **_SEED, **{k: None for k in synth.ANOMALY_KEYS}},
    "train": {"input": ..., **_SEED, "window_start_eV": "688", "L": "96", "channels": "16, 32, 64",
              "latent_dim": "40", "train_stride": "4", "epochs": "120", "batch_size": "2",
              "learning_rate": "0.001", "beta": "1.2", "kl_warmup_epochs": "0"},
    "reconstruct": {"input": ..., **_MODEL_IN, "stride": "24"},
    "detect": {"input": ..., "model": None, "recon": None, "truth": None, "methods": "vae, pca3, pca4, pca5",
               "stride": "24", "pr_steps": "200", **_DETECT},
    "eval": {"predicted": ..., "truth": ...},
    "sweep": {"input": ..., **_MODEL_IN, **_SEED, "magnitudes": "1.0:6.0:0.5", "pca_ks": "3, 4, 5",
              **_DETECT, **{k: None for k in synth.ANOMALY_KEYS if k != "shift_eV"}},
    "latent-sim": {"input": ..., **_MODEL_IN, **_SEED, "shift_eV": "2.5", "segment": "700, 730",
                   "pairs": "64", "anomaly_fraction": "0.03", "cluster_radius": "3"},
}


def resolve(command: str, config_path, overrides: list[str], seed: int | None) -> dict[str, str]:
    values = kv.read_kv(config_path) if config_path else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = (p.strip() for p in item.split("=", 1))
        values[k] = v
    if seed is not None:
        values["seed"] = str(seed)
    spec = KEYS[command]
    kv.check_keys(values, spec, command)
    resolved = {}
    for key, default in spec.items():
        if key in values:
            resolved[key] = values[key]
        elif default is ...:
            raise ConfigError(f"missing required key {key!r}")
        elif default is not None:
            resolved[key] = default
    return resolved


def _window(values) -> tuple[float, float]:
    lo, hi = kv.floats(values["window_eV"])
    return lo, hi


def _ints(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(float(v)) for v in kv.floats(raw))
    except ValueError as exc:
        raise ConfigError(f"expected a list of integers, got {raw!r}") from exc


def _cube_target(out: Path, default: str) -> tuple[Path, Path]:
    """(output directory, cube path); ``--out x.esi`` names the cube file directly."""
    if out.suffix == ".esi":
        return out.parent, out
    return out, out / default


def model_kv(model: synth.SpectrumModel) -> dict[str, str]:
    return {"background_amplitude": repr(model.background_amplitude),
            "background_exponent": repr(model.background_exponent),
            "peaks": ", ".join(f"{c!r}:{w!r}:{a!r}" for c, w, a in model.peaks),
            "jitter": repr(model.jitter), "energy_drift_eV": repr(model.energy_drift_eV),
            "thickness_variation": repr(model.thickness_variation),
            "field_scale_px": repr(model.field_scale_px)}


def anomaly_kv(spec: synth.AnomalySpec) -> dict[str, str]:
    """Explicit settings for a spec; random cluster placement is frozen into a list."""
    return {"shift_eV": repr(spec.shift_eV), "segment": f"{spec.segment[0]!r}, {spec.segment[1]!r}",
            "clusters": ", ".join(f"{x}:{y}:{r}" for x, y, r in spec.clusters),
            "fill_policy": spec.fill_policy}


def _load_model(path) -> cvae.ModelParams:
    params, _ = cvae.load_params(path)
    return params


# ---------------------------------------------------------------- subcommands

def cmd_gen(v: dict, out: Path) -> list[Path]:
    model = synth.model_from_kv(v)
    axis = synth.axis_from_kv(v)
    W, H = kv.get(v, "width", int), kv.get(v, "height", int)
    cube = synth.generate_bulk(model, W, H, axis, seed=kv.get(v, "seed", int))
    v.update(model_kv(model))
    v.update({"offset_eV": repr(axis.offset_eV), "dispersion_eV": repr(axis.dispersion_eV_per_channel),
              "channels": str(axis.channels)})
    out_dir, path = _cube_target(out, "cube.esi")
    out_dir.mkdir(parents=True, exist_ok=True)
    datacube.save(cube, path)
    return [path]


def cmd_inject(v: dict, out: Path) -> list[Path]:
    cube = datacube.load(v["input"])
    spec = synth.anomaly_from_kv(v, cube.width, cube.height, kv.get(v, "seed", int))
    v.update(anomaly_kv(spec))
    injected, mask = synth.inject_peak_shift(cube, spec)
    out_dir, path = _cube_target(out, "cube.esi")
    out_dir.mkdir(parents=True, exist_ok=True)
    datacube.save(injected, path)
    write_mask(out_dir / "mask.pgm", mask)
    ys, xs = np.nonzero(mask)
    rows = ["x,y"] + [f"{x},{y}" for y, x in zip(ys, xs)]
    (out_dir / "mask.csv").write_text("\n".join(rows) + "\n")
    return [path, out_dir / "mask.pgm", out_dir / "mask.csv"]


def cmd_train(v: dict, out: Path) -> list[Path]:
    cube = datacube.load(v["input"])
    start, _ = datacube.energy_window(cube, kv.get(v, "window_start_eV", float), cube.axis.end_eV)
    mc = cvae.ModelConfig(L=kv.get(v, "L", int), channels=_ints(v["channels"]),
                          latent_dim=kv.get(v, "latent_dim", int), channel_start=start)
    tc = cvae.TrainConfig(beta=kv.get(v, "beta", float), learning_rate=kv.get(v, "learning_rate", float),
                          epochs=kv.get(v, "epochs", int), batch_size=kv.get(v, "batch_size", int),
                          seed=kv.get(v, "seed", int),
                          kl_warmup_epochs=kv.get(v, "kl_warmup_epochs", int))
    shards = datacube.extract_shards(cvae.model_input(cube, mc), kv.get(v, "train_stride", int), mc.shard)
    log.info("training on %d shards, %d parameters", len(shards), cvae.init_params(mc, 0).count)
    params, history = cvae.train(shards, tc, mc)
    out.mkdir(parents=True, exist_ok=True)
    cvae.save_params(params, out / "model.cvw", tc.beta)
    cvae.write_history_csv(history, out / "loss.csv")
    return [out / "model.cvw", out / "loss.csv"]


def cmd_reconstruct(v: dict, out: Path) -> list[Path]:
    cube = datacube.load(v["input"])
    params = _load_model(v["model"])
    rec = cvae.reconstruct_cube(cube, params, kv.get(v, "stride", int))
    out.mkdir(parents=True, exist_ok=True)
    datacube.save(rec, out / "recon.esi")
    return [out / "recon.esi"]


def _match_channels(cube: datacube.Datacube, ref: datacube.Datacube) -> datacube.Datacube:
    """Crop ``cube`` to the channels of ``ref`` (same dispersion, ref inside cube)."""
    if cube.channels == ref.channels and cube.axis.offset_eV == ref.axis.offset_eV:
        return cube
    start = int(round((ref.axis.offset_eV - cube.axis.offset_eV) / cube.axis.dispersion_eV_per_channel))
    if start < 0 or start + ref.channels > cube.channels:
        raise ConfigError("reconstruction does not lie inside the input cube's energy range")
    return datacube.crop_energy(cube, start, start + ref.channels)


def cmd_detect(v: dict, out: Path) -> list[Path]:
    cube = datacube.load(v["input"])
    truth = read_mask(v["truth"]) if "truth" in v else None
    bins, gamma = kv.get(v, "bins", int), kv.get(v, "gamma", float)
    window = _window(v)
    maps: dict[str, detect.PccMap] = {}
    if "recon" in v:
        rec = datacube.load(v["recon"])
        original = _match_channels(cube, rec)
        maps["recon"] = pipeline.score(original, rec, window)
    else:
        methods = [m.strip() for m in v["methods"].split(",") if m.strip()]
        params = _load_model(v["model"]) if "model" in v else None
        if "vae" in methods:
            if params is None:
                raise ConfigError("method 'vae' needs a 'model' checkpoint")
            original, rec = pipeline.vae_reconstruction(cube, params, kv.get(v, "stride", int))
            maps["vae"] = pipeline.score(original, rec, window)
        ks = []
        for m in methods:
            if m.startswith("pca"):
                try:
                    ks.append(int(m[3:]))
                except ValueError as exc:
                    raise ConfigError(f"unknown method {m!r}") from exc
            elif m != "vae":
                raise ConfigError(f"unknown method {m!r}")
        if ks:
            cube_n = cvae.model_input(cube, params.config) if params else datacube.normalize_spectra(cube)
            for k, rec in pipeline.pca_reconstructions(cube_n, ks).items():
                maps[f"pca{k}"] = pipeline.score(cube_n, rec, window)
    out.mkdir(parents=True, exist_ok=True)
    written, reports, curves = [], [], {}
    H, W = cube.height, cube.width
    eval_truth = truth if truth is not None else np.zeros((H, W), dtype=bool)
    for name, pm in maps.items():
        rep = detect.detect(pm, eval_truth, bins, gamma)
        reports.append(({"method": name}, rep))
        write_heatmap(out / f"{name}_pcc.pgm", pm.values)
        detect.write_pcc_csv(pm, out / f"{name}_pcc.csv")
        detect.write_histogram_csv(detect.histogram_table(pm, truth, bins), out / f"{name}_histogram.csv")
        write_mask(out / f"{name}_predicted.pgm", rep.predicted_mask)
        written += [out / f"{name}_{s}" for s in ("pcc.pgm", "pcc.csv", "histogram.csv", "predicted.pgm")]
        if truth is not None and truth.any():
            curves[name] = detect.pr_curve(pm, truth, kv.get(v, "pr_steps", int))
    detect.write_report_csv(reports, out / "report.csv")
    written.append(out / "report.csv")
    if curves:
        detect.write_pr_csv(curves, out / "pr.csv")
        lines = ["method,pr_auc"] + [f"{m},{detect.pr_auc(c)!r}" for m, c in curves.items()]
        (out / "pr_auc.csv").write_text("\n".join(lines) + "\n")
        written += [out / "pr.csv", out / "pr_auc.csv"]
    return written


def cmd_eval(v: dict, out: Path) -> list[Path]:
    rep = detect.evaluate(read_mask(v["predicted"]), read_mask(v["truth"]))
    out.mkdir(parents=True, exist_ok=True)
    detect.write_report_csv([({"predicted": Path(v["predicted"]).name}, rep)], out / "report.csv")
    return [out / "report.csv"]


def cmd_sweep(v: dict, out: Path) -> list[Path]:
    cube = datacube.load(v["input"])
    params = _load_model(v["model"])
    seed = kv.get(v, "seed", int)
    base = synth.anomaly_from_kv(v, cube.width, cube.height, seed)
    v.update({k: s for k, s in anomaly_kv(base).items() if k != "shift_eV"})
    mags = kv.floats(v["magnitudes"])
    rows = pipeline.f1_sweep(cube, base, mags, params, _ints(v["pca_ks"]), _window(v),
                             kv.get(v, "bins", int), kv.get(v, "gamma", float))
    out.mkdir(parents=True, exist_ok=True)
    detect.write_report_csv(rows, out / "f1.csv")
    return [out / "f1.csv"]


def cmd_latent_sim(v: dict, out: Path) -> list[Path]:
    cube = datacube.load(v["input"])
    params = _load_model(v["model"])
    seg = kv.floats(v["segment"])
    pairs = latentdiag.make_pairs(cube, params.config, kv.get(v, "shift_eV", float), (seg[0], seg[1]),
                                  kv.get(v, "pairs", int), kv.get(v, "anomaly_fraction", float),
                                  kv.get(v, "cluster_radius", int), kv.get(v, "seed", int))
    M = latentdiag.similarity_matrix(pairs, params)
    diag, off = latentdiag.diagonal_margin(M)
    out.mkdir(parents=True, exist_ok=True)
    latentdiag.write_matrix_csv(M, out / "similarity.csv")
    latentdiag.write_matrix_pgm(M, out / "similarity.pgm")
    (out / "summary.csv").write_text(f"mean_diagonal,mean_off_diagonal\n{diag!r},{off!r}\n")
    return [out / "similarity.csv", out / "similarity.pgm", out / "summary.csv"]


COMMANDS = {"gen": cmd_gen, "inject": cmd_inject, "train": cmd_train, "reconstruct": cmd_reconstruct,
            "detect": cmd_detect, "eval": cmd_eval, "sweep": cmd_sweep, "latent-sim": cmd_latent_sim}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eelsvae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--seed", type=int, help="overrides 'seed'")
        p.add_argument("--out", required=True, help="output directory (gen/inject also accept a .esi path)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one setting; repeatable")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        values = resolve(args.command, args.config, args.set, args.seed)
        written = COMMANDS[args.command](values, out)
        snap_dir = out.parent if out.suffix == ".esi" else out
        (snap_dir / SNAPSHOT).write_text(kv.format_kv(values), encoding="utf-8")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (EelsVaeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
