"""Command-line surface: ingestion, synthesis, training, sampling, strain
analysis, evaluation, and reporting as reproducible batch runs.

Exit codes: 0 success, 2 bad usage, 3 config/schema error, 4 data error,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import fields as flds
from . import gan as ganmod
from . import gscore as gsmod
from . import swd as swdmod
from . import strain as strainmod
from .errors import ConfigError, DataError, DicganError, NumericalError, ShapeError

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERICAL = 5

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "required": ["seed", "data"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "data": {
            "type": "object",
            "properties": {
                "path": {"type": "string"},
                "synth": {
                    "type": "object",
                    "properties": {
                        "count": {"type": "integer", "minimum": 1},
                        "grid": {"type": "integer", "minimum": 4},
                        "noise_sigma": {"type": "number", "minimum": 0},
                        "bias_amp": {"type": "number", "minimum": 0},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "gan": {
            "type": "object",
            "properties": {
                "latent_dim": {"type": "integer", "minimum": 1},
                "base_grid": {"type": "integer", "minimum": 1},
                "base_channels": {"type": "integer", "minimum": 2},
                "up_blocks": {"type": "integer", "minimum": 1},
                "down_blocks": {"type": "integer", "minimum": 1},
                "physics_guided": {"type": "boolean"},
                "literal_loss": {"type": "boolean"},
            },
        },
        "train": {
            "type": "object",
            "properties": {
                "epochs": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 2},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "beta1": {"type": "number"},
                "beta2": {"type": "number"},
                "collapse_tau": {"type": ["number", "null"]},
                "checkpoint_every": {"type": "integer", "minimum": 0},
                "restart_on_collapse": {"type": "integer", "minimum": 0},
            },
        },
        "strain": {
            "type": "object",
            "properties": {
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "symmetric": {"type": "boolean"},
                "strain_norm": {"type": ["number", "null"]},
            },
        },
        "swd": {
            "type": "object",
            "properties": {
                "n_slices": {"type": "integer", "minimum": 1},
                "repeats": {"type": "integer", "minimum": 1},
            },
        },
        "gs": {
            "type": "object",
            "properties": {
                "n_sets": {"type": "integer", "minimum": 1},
                "landmark_size": {"type": "integer", "minimum": 2},
                "i_max": {"type": "integer", "minimum": 1},
                "gamma": {"type": ["number", "null"]},
            },
        },
    },
}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def write_json(path, obj) -> None:
    flds.write_atomic(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    if jsonschema is not None:
        try:
            jsonschema.validate(cfg, RUN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise ConfigError(f"{path}: schema violation: {e.message}") from None
    if "path" not in cfg.get("data", {}) and "synth" not in cfg.get("data", {}):
        raise ConfigError(f"{path}: data must provide 'path' or 'synth'")
    return cfg


def _load_real(cfg: dict) -> flds.FieldDataset:
    data = cfg["data"]
    if "path" in data:
        return flds.load_dataset(data["path"])
    syn = dict(data["synth"])
    count = syn.pop("count", 500)
    seed = syn.pop("seed", cfg["seed"])
    base = flds.SynthFieldSpec(grid=syn.pop("grid", 16),
                               noise_sigma=syn.pop("noise_sigma", 0.02),
                               bias_amp=syn.pop("bias_amp", 0.05))
    return flds.synth_dataset(count, base, seed)


def _resolve(cfg: dict, physics_guided=None, seed=None, asymmetric_shear=None):
    """Fill defaults and calibration-dependent values; returns
    (resolved config dict, scaled real array, GanSpec, TrainConfig)."""
    cfg = json.loads(json.dumps(cfg))  # deep copy
    if seed is not None:
        cfg["seed"] = seed
    real_raw = _load_real(cfg)
    real = flds.scale_dataset(real_raw).as_array()

    gan_cfg = dict(cfg.get("gan", {}))
    if physics_guided is not None:
        gan_cfg["physics_guided"] = physics_guided
    strain_cfg = dict(cfg.get("strain", {}))
    if asymmetric_shear is not None:
        strain_cfg["symmetric"] = not asymmetric_shear
    vm_kwargs = {k: v for k, v in strain_cfg.items() if k in ("delta", "h", "symmetric")}
    if strain_cfg.get("strain_norm") is None:
        probe_vm = strainmod.VmConfig(**vm_kwargs)
        strain_cfg["strain_norm"] = strainmod.calibrate_strain_norm(real, probe_vm)
    vm = strainmod.VmConfig(**vm_kwargs, strain_norm=strain_cfg["strain_norm"])

    resolution = real.shape[-1]
    gan_cfg.setdefault("base_grid", max(4, resolution // 2 ** gan_cfg.get("up_blocks", 1)))
    gan_cfg.setdefault("up_blocks", 1)
    try:
        spec = ganmod.GanSpec(vm=vm, **gan_cfg)
    except TypeError as e:
        raise ConfigError(f"bad gan config: {e}") from None
    if spec.resolution != resolution:
        raise ConfigError(f"gan resolution {spec.resolution} != data resolution {resolution}")

    train_cfg = dict(cfg.get("train", {}))
    train_cfg.setdefault("seed", cfg["seed"])
    if train_cfg.get("collapse_tau") is None:
        train_cfg["collapse_tau"] = ganmod.calibrate_collapse_tau(real)
    try:
        tcfg = ganmod.TrainConfig(**train_cfg)
    except TypeError as e:
        raise ConfigError(f"bad train config: {e}") from None

    cfg["gan"] = gan_cfg
    cfg["strain"] = strain_cfg
    cfg["train"] = train_cfg
    cfg.setdefault("swd", {"n_slices": 512, "repeats": 10})
    cfg.setdefault("gs", {"n_sets": 1000, "landmark_size": 64, "i_max": 100, "gamma": None})
    cfg["config_hash"] = config_hash({k: v for k, v in cfg.items() if k != "config_hash"})
    return cfg, real, spec, tcfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        syn = json.load(fh)
    count = syn.pop("count", 100)
    seed = args.seed if args.seed is not None else syn.pop("seed", 0)
    syn.pop("seed", None)
    base = flds.SynthFieldSpec(**syn)
    ds = flds.synth_dataset(count, base, seed)
    flds.save_dataset(args.out, ds)
    print(f"wrote {len(ds)} fields of {ds.resolution[0]}x{ds.resolution[1]} to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    f = flds.ingest_scatter_csv(args.csv, args.grid, args.extent)
    flds.save_ftc(args.out, {"u": f.as_array()[None]})
    print(f"gridded {args.csv} onto {args.grid}x{args.grid} -> {args.out}")
    return 0


def cmd_strain(args) -> int:
    ds = flds.load_dataset(args.input)
    vm = strainmod.VmConfig(delta=args.delta, h=args.h,
                            symmetric=not args.asymmetric_shear)
    exx, eyy, exy, evm = [], [], [], []
    for f in ds.fields:
        s = strainmod.strain_fields(f, vm)
        exx.append(s.eps_xx)
        eyy.append(s.eps_yy)
        exy.append(s.eps_xy)
        evm.append(strainmod.von_mises(s, vm))
    tensors = {"eps_xx": np.stack(exx), "eps_yy": np.stack(eyy),
               "eps_xy": np.stack(exy), "eps_vm": np.stack(evm)}
    flds.save_ftc(args.out, tensors)
    if args.csv:
        os.makedirs(args.csv, exist_ok=True)
        for i in range(len(ds)):
            rows = ["row,col,eps_xx,eps_yy,eps_xy,eps_vm"]
            h, w = exx[i].shape
            for r in range(h):
                for c in range(w):
                    rows.append(f"{r},{c},{exx[i][r, c]!r},{eyy[i][r, c]!r},"
                                f"{exy[i][r, c]!r},{evm[i][r, c]!r}")
            flds.write_atomic(os.path.join(args.csv, f"field_{i:04d}.csv"),
                              ("\n".join(rows) + "\n").encode())
    print(f"wrote strains for {len(ds)} fields to {args.out}")
    return 0


def _train_one(cfg, real, spec, tcfg, out_dir, tag: str):
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.monotonic()
    state = ganmod.train(real, spec, tcfg)
    wall = time.monotonic() - t0
    prefix = os.path.join(out_dir, f"checkpoint_{tag}")
    ganmod.save_checkpoint(prefix, state)
    flds.write_atomic(os.path.join(out_dir, f"losses_{tag}.csv"),
                      ganmod.history_csv(state.history).encode())
    write_json(os.path.join(out_dir, f"timing_{tag}.json"), {"wall_clock_seconds": wall})
    return state, prefix


def cmd_train(args) -> int:
    physics = None
    if args.physics_guided is not None:
        physics = args.physics_guided == "on"
    cfg, real, spec, tcfg = _resolve(load_config(args.config), physics_guided=physics,
                                     seed=args.seed,
                                     asymmetric_shear=args.asymmetric_shear or None)
    out_dir = args.out or cfg.get("out_dir") or "run"
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "resolved_config.json"), cfg)
    tag = "physics" if spec.physics_guided else "classical"
    state, prefix = _train_one(cfg, real, spec, tcfg, out_dir, tag)
    print(f"trained {tag} GAN for {state.epoch} epochs ({state.step} steps); "
          f"collapse stat {state.collapse_stat:.4f} "
          f"({'COLLAPSED' if state.collapsed else 'ok'}); checkpoint {prefix}.ftc")
    return 0


def cmd_sample(args) -> int:
    state = ganmod.load_checkpoint(args.checkpoint)
    ds = ganmod.sample(state.generator, args.count, args.seed)
    arr = ds.as_array() if len(ds) else np.zeros((0, 2, state.spec.resolution,
                                                  state.spec.resolution))
    flds.save_ftc(args.out, {"u": arr})
    print(f"sampled {args.count} fields -> {args.out}")
    return 0


def _swd_report(real, fake, seed, swd_cfg):
    res = swdmod.swd_protocol(real, fake, seed=seed,
                              n_slices=swd_cfg.get("n_slices", 512),
                              repeats=swd_cfg.get("repeats", 10))
    return {
        "resolutions": res.resolutions,
        "per_level": res.per_level,
        "mean": res.mean,
        **res.scaled(),
        "patch_counts": res.patch_counts,
        "n_slices": res.n_slices,
        "repeats": res.repeats,
        "seed": seed,
    }, res


def cmd_eval_swd(args) -> int:
    real = flds.load_dataset(args.real, scaled=True).as_array()
    fake = flds.load_dataset(args.fake, scaled=True).as_array()
    if len(fake) != len(real):
        raise DataError(f"dataset sizes differ: real {len(real)} vs fake {len(fake)}")
    report, res = _swd_report(real, fake, args.seed,
                              {"n_slices": args.slices, "repeats": args.repeats})
    write_json(args.out, report)
    if args.csv:
        rows = ["rep,resolution,swd"]
        for rep in range(res.per_rep.shape[0]):
            for lv, r in enumerate(res.resolutions):
                rows.append(f"{rep},{r},{res.per_rep[rep, lv]!r}")
        flds.write_atomic(args.csv, ("\n".join(rows) + "\n").encode())
    print(f"SWD mean x1e3 = {res.mean * 1e3:.4f} -> {args.out}")
    return 0


def _gs_report(real, fake, seed, gs_cfg):
    cfg = gsmod.GsConfig(n_sets=gs_cfg.get("n_sets", 1000),
                         landmark_size=gs_cfg.get("landmark_size", 64),
                         i_max=gs_cfg.get("i_max", 100),
                         gamma=gs_cfg.get("gamma"), seed=seed)
    gs, m_fake, m_real = gsmod.geometry_score(fake, real, cfg)
    return {
        "gs": gs,
        "gs_x1e3": gs * 1e3,
        "mrlt_fake": m_fake.tolist(),
        "mrlt_real": m_real.tolist(),
        "n_sets": cfg.n_sets,
        "landmark_size": cfg.landmark_size,
        "i_max": cfg.i_max,
        "gamma": cfg.gamma,
        "seed": seed,
    }


def cmd_eval_gs(args) -> int:
    real = flds.load_dataset(args.real, scaled=True).as_array()
    fake = flds.load_dataset(args.fake, scaled=True).as_array()
    report = _gs_report(real, fake, args.seed,
                        {"n_sets": args.n_sets, "landmark_size": args.landmarks,
                         "i_max": args.i_max, "gamma": args.gamma})
    write_json(args.out, report)
    if args.csv:
        rows = ["i,mrlt_real,mrlt_fake"]
        for i, (a, b) in enumerate(zip(report["mrlt_real"], report["mrlt_fake"])):
            rows.append(f"{i},{a!r},{b!r}")
        flds.write_atomic(args.csv, ("\n".join(rows) + "\n").encode())
    print(f"GS x1e3 = {report['gs_x1e3']:.4f} -> {args.out}")
    return 0


def cmd_report(args) -> int:
    run = args.run
    cfg_path = os.path.join(run, "resolved_config.json")
    if not os.path.exists(cfg_path):
        raise DataError(f"{run}: missing resolved_config.json")
    with open(cfg_path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    stored = cfg.pop("config_hash", None)
    if stored != config_hash(cfg):
        raise ConfigError(f"{run}: config hash mismatch (tampered or corrupted)")

    def read_json(name):
        p = os.path.join(run, name)
        if not os.path.exists(p):
            return None
        with open(p, "r", encoding="utf-8") as fh:
            return json.load(fh)

    swd_rep = read_json("swd.json")
    gs_rep = read_json("gs.json")
    if swd_rep is None and gs_rep is None:
        raise DataError(f"{run}: no evaluation artifacts (swd.json / gs.json)")
    collapse = None
    for tag in ("physics", "classical"):
        m = read_json(f"checkpoint_{tag}.json")
        if m is not None:
            collapse = m.get("collapse_stat")
            break
    report = {
        "swd": swd_rep,
        "gs": gs_rep,
        "collapse_stat": collapse,
        "config_hash": stored,
        "seed": cfg.get("seed"),
    }
    write_json(args.out or os.path.join(run, "metrics_report.json"), report)
    if swd_rep is not None:
        rows = ["resolution,swd,swd_x1e3"]
        for r, v in zip(swd_rep["resolutions"], swd_rep["per_level"]):
            rows.append(f"{r},{v!r},{v * 1e3!r}")
        flds.write_atomic(os.path.join(run, "swd_levels.csv"), ("\n".join(rows) + "\n").encode())
    if gs_rep is not None:
        rows = ["i,mrlt_real,mrlt_fake"]
        for i, (a, b) in enumerate(zip(gs_rep["mrlt_real"], gs_rep["mrlt_fake"])):
            rows.append(f"{i},{a!r},{b!r}")
        flds.write_atomic(os.path.join(run, "mrlt.csv"), ("\n".join(rows) + "\n").encode())
    print(f"report written for {run}")
    return 0


def cmd_compare(args) -> int:
    base_cfg = load_config(args.config)
    out_dir = args.out or base_cfg.get("out_dir") or "compare"
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    mrlts = {}
    for tag, physics in (("classical", False), ("physics", True)):
        cfg, real, spec, tcfg = _resolve(base_cfg, physics_guided=physics)
        write_json(os.path.join(out_dir, f"resolved_config_{tag}.json"), cfg)
        ckpt = getattr(args, f"{tag}_checkpoint", None)
        if ckpt:
            state = ganmod.load_checkpoint(ckpt)
        else:
            state, _ = _train_one(cfg, real, spec, tcfg, out_dir, tag)
        fake = ganmod.sample_array(state.generator, real.shape[0], cfg["seed"])
        swd_rep, _ = _swd_report(real, fake, cfg["seed"], cfg["swd"])
        gs_rep = _gs_report(real, fake, cfg["seed"], cfg["gs"])
        mrlts[tag] = {"real": gs_rep["mrlt_real"], "fake": gs_rep["mrlt_fake"]}
        rows.append({
            "model": "Physics-guided" if physics else "Classical",
            "epoch": state.epoch,
            "gs_x1e3": gs_rep["gs_x1e3"],
            "swd_x1e3": swd_rep["mean_x1e3"],
            "swd_per_level_x1e3": swd_rep["per_level_x1e3"],
            "collapse_stat": state.collapse_stat,
            "collapsed": state.collapsed,
        })
    report = {"rows": rows, "mrlt": mrlts,
              "physics_beats_classical": {
                  "gs": rows[1]["gs_x1e3"] < rows[0]["gs_x1e3"],
                  "swd": rows[1]["swd_x1e3"] < rows[0]["swd_x1e3"],
              }}
    write_json(os.path.join(out_dir, "compare_report.json"), report)
    for row in rows:
        print(f"{row['model']:15s} epoch {row['epoch']:5d}  "
              f"GS x1e3 {row['gs_x1e3']:10.4f}  SWD x1e3 {row['swd_x1e3']:10.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dicgan",
                                description="Physics-guided GAN for DIC displacement "
                                            "fields, with SWD and geometry-score evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic mode-I dataset")
    sp.add_argument("--spec", required=True, help="JSON synthesis spec")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="grid a scattered DIC CSV")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--grid", type=int, required=True)
    sp.add_argument("--extent", type=float, required=True, help="region extent in mm")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train", help="train a GAN from a run config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--physics-guided", choices=["on", "off"], default=None)
    sp.add_argument("--asymmetric-shear", action="store_true",
                    help="use du_x/dy alone as the shear term")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="sample fields from a checkpoint")
    sp.add_argument("--checkpoint", required=True, help="checkpoint path prefix")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("strain", help="compute strain fields for a dataset")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv", default=None, help="directory for per-field CSVs")
    sp.add_argument("--h", type=float, default=1.0)
    sp.add_argument("--delta", type=float, default=1e-8)
    sp.add_argument("--asymmetric-shear", action="store_true",
                    help="use du_x/dy alone as the shear term")
    sp.set_defaults(func=cmd_strain)

    ev = sub.add_parser("eval", help="evaluate fake-vs-real datasets")
    evsub = ev.add_subparsers(dest="metric", required=True)

    sp = evsub.add_parser("swd", help="multi-scale sliced Wasserstein distance")
    sp.add_argument("--real", required=True)
    sp.add_argument("--fake", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv", default=None, help="per-repetition CSV")
    sp.add_argument("--slices", type=int, default=512)
    sp.add_argument("--repeats", type=int, default=10)
    sp.set_defaults(func=cmd_eval_swd)

    sp = evsub.add_parser("gs", help="geometry score")
    sp.add_argument("--real", required=True)
    sp.add_argument("--fake", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--csv", default=None, help="MRLT CSV")
    sp.add_argument("--n-sets", type=int, default=1000)
    sp.add_argument("--landmarks", type=int, default=64)
    sp.add_argument("--i-max", type=int, default=100)
    sp.add_argument("--gamma", type=float, default=None)
    sp.set_defaults(func=cmd_eval_gs)

    sp = sub.add_parser("report", help="collect run artifacts into a metrics report")
    sp.add_argument("--run", required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("compare", help="classical vs physics-guided side-by-side")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--classical-checkpoint", dest="classical_checkpoint", default=None)
    sp.add_argument("--physics-checkpoint", dest="physics_checkpoint", default=None)
    sp.set_defaults(func=cmd_compare)

    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DicganError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:  # console entry point
    sys.exit(run_command())


if __name__ == "__main__":
    main()
