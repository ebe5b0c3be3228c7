"""Command-line entry point wiring dataset synthesis, selection, training,
sampling, evaluation, and heatmap rendering.

Commands: ``gen-data``, ``select-fragments``, ``train``, ``sample``,
``eval``, ``render``. A JSON config file (``--config``) may supply any long
flag (key = flag name without dashes, dashes as underscores); explicit
command-line values win. Every source of randomness takes an explicit seed.

Heatmaps are binary PPM (P6), one pixel per cell, linear blue-to-red over
fixed bounds, so renders are bit-exact for a given map and bounds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diffusion as dif
from . import metrics
from . import scenario as sc
from . import selection
from .errors import RadioMapError
from .scenario import RadioMap


def render_heatmap(rmap, path, vmin: float, vmax: float):
    """Write a P6 PPM, one pixel per cell, blue (vmin) to red (vmax)."""
    values = rmap.values_dbm if isinstance(rmap, RadioMap) else np.asarray(rmap)
    h, w = values.shape
    span = max(vmax - vmin, 1e-9)
    v = np.clip((values.astype(np.float64) - vmin) / span, 0.0, 1.0)
    red = np.rint(255.0 * v).astype(np.uint8)
    blue = np.rint(255.0 * (1.0 - v)).astype(np.uint8)
    pixels = np.stack([red, np.zeros_like(red), blue], axis=-1)
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6 {w} {h} 255\n".encode("ascii"))
            fh.write(pixels.tobytes(order="C"))
    except OSError as exc:
        raise RadioMapError(f"cannot write image to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# config-file merging
# ---------------------------------------------------------------------------

def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise RadioMapError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise RadioMapError(f"config {path} must hold a JSON object")
    return cfg


class _Resolver:
    """Command-line values override config-file values override defaults."""

    def __init__(self, args, parser):
        self.args = vars(args)
        self.cfg = _load_config(self.args.get("config"))
        self.parser = parser

    def get(self, name, default=None, required=False, cast=None):
        value = self.args.get(name)
        if value is None:
            value = self.cfg.get(name, default)
        if value is None and required:
            self.parser.error(f"missing required option --{name.replace('_', '-')}")
        if value is not None and cast is not None:
            value = cast(value)
        return value


def _etr_list(text) -> list:
    out = [float(x) for x in str(text).split(",") if x]
    if not out or any(e <= 0 for e in out):
        raise ValueError(f"invalid etr list {text!r}")
    return out


def _tx_list(text) -> list:
    out = []
    for part in str(text).split(";"):
        x, y = part.split(",")
        out.append(sc.TxLocation(int(x), int(y)))
    return out


def _split_point(n_records: int, holdout: float) -> int:
    if not 0.0 <= holdout < 1.0:
        raise RadioMapError(f"--split must be in [0, 1), got {holdout}")
    return n_records - int(round(n_records * holdout))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, parser):
    r = _Resolver(args, parser)
    regime = r.get("regime", required=True)
    count = r.get("count", required=True, cast=int)
    seed = r.get("seed", required=True, cast=int)
    out = r.get("out", required=True)
    grid_n = r.get("grid_n", 32, cast=int)
    if count < 1:
        parser.error(f"--count must be >= 1, got {count}")
    params = sc.ScenarioParams.defaults(regime, grid_n=grid_n)
    ds = sc.build_dataset(regime, count, seed, params=params, out_path=out)
    print(
        f"wrote {len(ds)} {regime} records to {out} "
        f"(min {ds.min_dbm:.3f} dBm, max {ds.max_dbm:.3f} dBm)"
    )
    return 0


def _select_fragments(record, bounds, method, percent, k, n_subareas, seed):
    m = selection.fragment_budget(percent, record.scenario.grid_n, k)
    if method == "env":
        return selection.environment_aware_select(
            record.scenario, record.radio_map, n_subareas, m, k
        )
    return selection.random_select(record.radio_map, m, k, seed=seed)


def cmd_select_fragments(args, parser):
    r = _Resolver(args, parser)
    data = r.get("data", required=True)
    index = r.get("index", 0, cast=int)
    method = r.get("method", "env")
    percent = r.get("percent", 10.0, cast=float)
    k = r.get("k", 4, cast=int)
    n_subareas = r.get("n_subareas", 16, cast=int)
    seed = r.get("seed", cast=int, required=(method == "random"))
    out = r.get("out")

    ds = sc.load_dataset(data)
    if not 0 <= index < len(ds):
        parser.error(f"--index {index} outside dataset of {len(ds)} records")
    frags = _select_fragments(ds.records[index], ds.bounds, method, percent, k, n_subareas, seed)
    for f in frags:
        print(f"fragment origin=({f.origin[0]},{f.origin[1]}) k={f.size_k}")
    if out:
        payload = {
            "record": index,
            "method": method,
            "fragments": [
                {
                    "origin": list(f.origin),
                    "k": f.size_k,
                    "values_dbm": f.values_dbm.tolist(),
                }
                for f in frags
            ],
        }
        Path(out).write_text(json.dumps(payload, indent=2) + "\n")
        print(f"wrote {len(frags)} fragments to {out}")
    return 0


def cmd_train(args, parser):
    r = _Resolver(args, parser)
    data = r.get("data", required=True)
    cond = r.get("cond", "fragments")
    kind = dif.FRAGMENTS if cond == "fragments" else dif.TX_LOCATIONS
    cfg = dif.TrainConfig(
        lr=r.get("lr", required=True, cast=float),
        epochs=r.get("epochs", required=True, cast=int),
        batch_size=r.get("batch_size", 16, cast=int),
        seed=r.get("seed", required=True, cast=int),
        condition_kind=kind,
        selection_method=r.get("select", "env"),
        fragment_percent=r.get("percent", 10.0, cast=float),
        fragment_k=r.get("k", 4, cast=int),
        n_subareas=r.get("n_subareas", 16, cast=int),
    )
    t_steps = r.get("t_steps", 400, cast=int)
    beta1 = r.get("beta1", 1e-4, cast=float)
    beta_t = r.get("beta_t", 0.02, cast=float)
    holdout = r.get("split", 0.2, cast=float)
    out = r.get("out", required=True)

    ds = sc.load_dataset(data)
    cut = _split_point(len(ds), holdout)
    if cut < 1:
        parser.error("training split is empty; lower --split")
    train_ds = sc.Dataset(
        ds.regime, ds.grid_n, ds.cell_size_m, ds.freq_ghz, ds.min_dbm, ds.max_dbm,
        ds.records[:cut],
    )
    sched = dif.linear_schedule(t_steps, beta1, beta_t)
    print(
        f"training on {len(train_ds)} records ({cond} condition, "
        f"T={t_steps}, lr={cfg.lr:g}, {cfg.epochs} epochs)"
    )
    ckpt = dif.train(
        train_ds, cfg, sched, log=lambda e, v: print(f"epoch {e:3d} loss {v:.6f}")
    )
    dif.save_checkpoint(ckpt, out)
    print(f"wrote checkpoint to {out}")
    return 0


def _condition_for_record(record, ckpt, method, percent, n_subareas, seed):
    return dif.build_condition(
        record,
        ckpt.condition_kind,
        ckpt.bounds,
        selection_method=method,
        percent=percent,
        k=ckpt.fragment_k,
        n_subareas=n_subareas,
        capacity=ckpt.capacity,
        select_seed=seed,
    )


def cmd_sample(args, parser):
    r = _Resolver(args, parser)
    ckpt_path = r.get("ckpt", required=True)
    seed = r.get("seed", required=True, cast=int)
    sigma = r.get("sigma", dif.POSTERIOR)
    out_ppm = r.get("out_ppm")
    out_csv = r.get("out_csv")
    tx_text = r.get("tx")

    ckpt = dif.load_checkpoint(ckpt_path)
    if tx_text:
        cond = dif.ConditionSet.from_tx(_tx_list(tx_text), capacity=ckpt.capacity)
    else:
        data = r.get("data", required=True)
        index = r.get("index", 0, cast=int)
        ds = sc.load_dataset(data)
        if not 0 <= index < len(ds):
            parser.error(f"--index {index} outside dataset of {len(ds)} records")
        cond = _condition_for_record(
            ds.records[index],
            ckpt,
            r.get("select", "env"),
            r.get("percent", 10.0, cast=float),
            r.get("n_subareas", 16, cast=int),
            seed,
        )
    rmap = dif.sample(cond, ckpt, seed=seed, sigma_mode=sigma)
    print(
        f"sampled {rmap.grid_n}x{rmap.grid_n} map: "
        f"min {rmap.values_dbm.min():.3f} dBm, max {rmap.values_dbm.max():.3f} dBm"
    )
    if out_ppm:
        render_heatmap(rmap, out_ppm, ckpt.min_dbm, ckpt.max_dbm)
        print(f"wrote {out_ppm}")
    if out_csv:
        np.savetxt(out_csv, rmap.values_dbm, delimiter=",", fmt="%.4f")
        print(f"wrote {out_csv}")
    return 0


def cmd_eval(args, parser):
    r = _Resolver(args, parser)
    ckpt_path = r.get("ckpt", required=True)
    data = r.get("data", required=True)
    etrs = r.get("etr", "0.10", cast=_etr_list)
    seed = r.get("seed", required=True, cast=int)
    holdout = r.get("split", 0.2, cast=float)
    limit = r.get("limit", cast=int)
    method = r.get("select", "env")
    percent = r.get("percent", 10.0, cast=float)
    n_subareas = r.get("n_subareas", 16, cast=int)
    sigma = r.get("sigma", dif.POSTERIOR)
    report_path = r.get("report")
    csv_path = r.get("csv")
    render_dir = r.get("render")

    ckpt = dif.load_checkpoint(ckpt_path)
    ds = sc.load_dataset(data)
    cut = _split_point(len(ds), holdout)
    records = ds.records[cut:] if holdout > 0 else ds.records
    if limit:
        records = records[:limit]
    if not records:
        parser.error("evaluation split is empty; raise --split or --limit")

    select_children = np.random.SeedSequence(seed).spawn(len(records))
    conds = [
        _condition_for_record(rec, ckpt, method, percent, n_subareas, select_children[i])
        for i, rec in enumerate(records)
    ]
    generated = dif.sample_batch(conds, ckpt, seed=seed, sigma_mode=sigma)
    gt_maps = [rec.radio_map for rec in records]
    report = metrics.evaluate(
        gt_maps, generated, etr=etrs[0], extra_etrs=tuple(etrs[1:])
    )
    sys.stdout.write(report.to_text())
    if report_path:
        report.write_text(report_path)
        print(f"wrote {report_path}")
    if csv_path:
        report.write_csv(csv_path)
        print(f"wrote {csv_path}")
    if render_dir:
        out = Path(render_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, (gt, gen) in enumerate(zip(gt_maps, generated)):
            render_heatmap(gt, out / f"{i:04d}_truth.ppm", ckpt.min_dbm, ckpt.max_dbm)
            render_heatmap(gen, out / f"{i:04d}_generated.ppm", ckpt.min_dbm, ckpt.max_dbm)
            render_heatmap(metrics.error_map(gt, gen), out / f"{i:04d}_error.ppm", 0.0, 1.0)
        print(f"wrote {3 * len(gt_maps)} images to {render_dir}")
    return 0


def cmd_render(args, parser):
    r = _Resolver(args, parser)
    data = r.get("data", required=True)
    index = r.get("index", 0, cast=int)
    out = r.get("out", required=True)
    ds = sc.load_dataset(data)
    if not 0 <= index < len(ds):
        parser.error(f"--index {index} outside dataset of {len(ds)} records")
    render_heatmap(ds.records[index].radio_map, out, ds.min_dbm, ds.max_dbm)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON file supplying any long flag")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radiomap",
        description="Synthesize, train on, and evaluate grid radio maps "
        "with a conditional diffusion model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--regime", choices=[sc.INDOOR, sc.OUTDOOR])
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--grid-n", type=int, dest="grid_n")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("select-fragments", help="run fragment selection on a record")
    p.add_argument("--data")
    p.add_argument("--index", type=int)
    p.add_argument("--method", choices=["env", "random"])
    p.add_argument("--percent", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--n-subareas", type=int, dest="n_subareas")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_select_fragments)

    p = sub.add_parser("train", help="train a conditional denoiser")
    p.add_argument("--data")
    p.add_argument("--cond", choices=["fragments", "tx"])
    p.add_argument("--select", choices=["env", "random"])
    p.add_argument("--percent", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--n-subareas", type=int, dest="n_subareas")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--t-steps", type=int, dest="t_steps")
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta-t", type=float, dest="beta_t")
    p.add_argument("--split", type=float)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample a map from a checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--seed", type=int)
    p.add_argument("--data")
    p.add_argument("--index", type=int)
    p.add_argument("--select", choices=["env", "random"])
    p.add_argument("--percent", type=float)
    p.add_argument("--n-subareas", type=int, dest="n_subareas")
    p.add_argument("--tx", help='transmitter condition, e.g. "4,7;20,11"')
    p.add_argument("--sigma", choices=[dif.POSTERIOR, dif.BETA])
    p.add_argument("--out-ppm", dest="out_ppm")
    p.add_argument("--out-csv", dest="out_csv")
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out records")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--etr", help="comma-separated thresholds, e.g. 0.10,0.12")
    p.add_argument("--seed", type=int)
    p.add_argument("--split", type=float)
    p.add_argument("--limit", type=int)
    p.add_argument("--select", choices=["env", "random"])
    p.add_argument("--percent", type=float)
    p.add_argument("--n-subareas", type=int, dest="n_subareas")
    p.add_argument("--sigma", choices=[dif.POSTERIOR, dif.BETA])
    p.add_argument("--report")
    p.add_argument("--csv")
    p.add_argument("--render")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render a dataset record as a PPM heatmap")
    p.add_argument("--data")
    p.add_argument("--index", type=int)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except RadioMapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
