"""Command line front end wiring the modules into reproducible experiments.

Subcommands: codebook, patterns, simulate, decode, sweep, adaptive, mux.
Every experiment accepts a plain-text config file (INI sections named after
the subcommand); command line flags override config values.  Exit codes:
0 ok, 1 user error, 2 internal error.  SLCODEC_THREADS sets the decoder
thread count.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import os
import sys
import traceback

import numpy as np

from . import channel, decoder, edc, imgio, patterns, source_mux
from .codebook import (
    ConfigurationError,
    SearchFailure,
    build_preset,
    export_codebook,
    poisson_disk_search,
    preset_names,
)


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def _config_section(path: str | None, section: str) -> dict:
    if not path:
        return {}
    if not os.path.exists(path):
        raise UserError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    merged = {}
    for sec in ("common", section):
        if cp.has_section(sec):
            merged.update(dict(cp.items(sec)))
    return merged


def _resolve(args, config: dict, key: str, cast, default):
    cli_val = getattr(args, key, None)
    if cli_val is not None:
        return cli_val
    if key in config:
        raw = config[key]
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return default


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in str(text).replace(",", " ").split()]


def _config_hash(params: dict) -> str:
    blob = ";".join(f"{k}={params[k]}" for k in sorted(params))
    return hashlib.sha256(blob.encode()).hexdigest()[:10]


def _write_csv(path, rows: list[dict]):
    if not rows:
        raise UserError("nothing to write")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _scene_from(settings: dict) -> channel.Scene:
    return channel.procedural_scene(
        settings["scene"],
        settings["rows"],
        settings["cols"],
        params=settings.get("scene_params"),
        seed=settings["scene_seed"],
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_codebook(args, config):
    action = args.action
    if action == "list":
        rows = []
        for name in preset_names():
            book = build_preset(name)
            rows.append(
                {"name": name, "n": book.n, "k": book.k, "q": book.q, "d_min": book.d_min}
            )
        out = _resolve(args, config, "out", str, None)
        if out:
            _write_csv(out, rows)
            print(f"wrote {out}")
        else:
            print("name,n,k,q,d_min")
            for r in rows:
                print(f"{r['name']},{r['n']},{r['k']},{r['q']},{r['d_min']}")
        return 0
    if action == "export":
        book = build_preset(args.preset)
        out = _resolve(args, config, "out", str, f"{args.preset}.codebook.txt")
        export_codebook(book, out)
        print(f"wrote {out} (n={book.n} k={book.k} q={book.q} d_min={book.d_min})")
        return 0
    if action == "search":
        budget = _resolve(args, config, "budget", int, 10_000_000)
        book = poisson_disk_search(args.n, args.k, args.d, seed=args.seed, budget=budget)
        out = _resolve(args, config, "out", str, f"search_{args.n}_{args.k}_{args.d}.txt")
        export_codebook(book, out)
        print(f"wrote {out} (verified d_min={book.d_min})")
        return 0
    raise UserError(f"unknown codebook action {action!r}")


def cmd_patterns(args, config):
    preset = _resolve(args, config, "preset", str, "golay22")
    rows = _resolve(args, config, "rows", int, 8)
    cols = _resolve(args, config, "cols", int, 1024)
    arrangement = _resolve(args, config, "arrangement", str, "gray")
    out = _resolve(args, config, "out", str, "patterns_out")
    book = build_preset(preset)
    cube = patterns.build_pattern_cube(book, rows, cols, arrangement)
    if args.xor_base is not None:
        cube = patterns.xor_transform(cube, args.xor_base)
    names = patterns.export_frames(cube, out)
    profile = patterns.adjacency_profile(cube)
    _write_csv(
        os.path.join(out, "adjacency.csv"),
        [
            {
                "max_adjacent_distance": profile.max_adjacent_distance,
                "mean_adjacent_distance": profile.mean_adjacent_distance,
                "max_run_length": int(profile.frame_max_run.max()),
            }
        ],
    )
    print(f"wrote {len(names)} frames to {out}")
    return 0


def _common_sim_settings(args, config):
    return {
        "scene": _resolve(args, config, "scene", str, "slanted-plane"),
        "rows": _resolve(args, config, "rows", int, 128),
        "cols": _resolve(args, config, "cols", int, 256),
        "scene_seed": _resolve(args, config, "scene_seed", int, 0),
        "preset": _resolve(args, config, "preset", str, "golay22"),
        "ratio": _resolve(args, config, "ratio", float, 4.0),
        "sigma_r": _resolve(args, config, "sigma_r", float, 0.004),
        "sigma_s": _resolve(args, config, "sigma_s", float, 0.04),
        "quant_bits": _resolve(args, config, "quant_bits", int, 12),
        "budget": _resolve(args, config, "budget", float, 1.0),
        "seed": _resolve(args, config, "seed", int, 0),
        "out": _resolve(args, config, "out", str, "run_out"),
    }


def cmd_simulate(args, config):
    s = _common_sim_settings(args, config)
    scene = _scene_from(s)
    book = build_preset(s["preset"])
    arrangement = "gray" if book.q == 2 else "binary"
    cube = patterns.build_pattern_cube(book, *scene.shape, arrangement)
    ideal = channel.warp(cube, scene)
    noise = channel.NoiseModel(s["sigma_r"], s["sigma_s"], s["quant_bits"], s["seed"])
    cap = channel.capture(ideal, scene, noise, s["ratio"], s["budget"])
    os.makedirs(s["out"], exist_ok=True)
    for i in range(cap.n_frames):
        img = np.clip(cap.frames[i] * 65535.0, 0, 65535).astype(np.uint16)
        imgio.write_pgm(os.path.join(s["out"], f"capture_{i:03d}.pgm"), img)
    for name, img in (("calib_on", cap.calib_on), ("calib_off", cap.calib_off)):
        imgio.write_pgm(
            os.path.join(s["out"], f"{name}.pgm"),
            np.clip(img * 65535.0, 0, 65535).astype(np.uint16),
        )
    imgio.write_pfm(os.path.join(s["out"], "gt_disparity.pfm"), scene.gt_disparity)
    with open(os.path.join(s["out"], "run.txt"), "w") as fh:
        for k in sorted(s):
            fh.write(f"{k}={s[k]}\n")
    print(f"wrote {cap.n_frames} capture frames to {s['out']}")
    return 0


def cmd_decode(args, config):
    s = _common_sim_settings(args, config)
    method = _resolve(args, config, "method", str, "soft")
    t_low = _resolve(args, config, "t_low", float, 0.1)
    t_high = _resolve(args, config, "t_high", float, 0.5)
    window = _resolve(args, config, "window", int, 5)
    tolerance = _resolve(args, config, "tolerance", int, 2)
    scene = _scene_from(s)
    noise = channel.NoiseModel(s["sigma_r"], s["sigma_s"], s["quant_bits"], s["seed"])
    maps = decoder.run_pipeline(
        scene, s["preset"], power=s["ratio"], noise=noise, budget=s["budget"],
        methods=(method,), t_low=t_low, t_high=t_high, window=window,
    )
    disp = maps[method]
    result = maps["_result"]
    os.makedirs(s["out"], exist_ok=True)
    tag = _config_hash({**s, "method": method})
    imgio.write_pfm(os.path.join(s["out"], f"disparity_{method}.pfm"), disp)
    imgio.write_pfm(os.path.join(s["out"], "confidence.pfm"), result.confidence)
    errors = np.abs(disp - scene.gt_disparity) > tolerance
    imgio.render_disparity_png(
        os.path.join(s["out"], f"disparity_{method}_{tag}.png"),
        disp, valid=scene.valid, error_mask=errors,
    )
    rate0 = decoder.error_rate(disp, scene, 0)
    rate_t = decoder.error_rate(disp, scene, tolerance)
    _write_csv(
        os.path.join(s["out"], "metrics.csv"),
        [
            {
                "method": method, "code": s["preset"], "ratio": s["ratio"],
                "error_exact": rate0, f"error_tol{tolerance}": rate_t,
            }
        ],
    )
    print(f"{method} decode: error(exact)={rate0:.4f} error(tol {tolerance})={rate_t:.4f}")
    return 0


def cmd_sweep(args, config):
    s = _common_sim_settings(args, config)
    codes = _resolve(args, config, "codes", str, "gray10 golay22").split()
    ratios = _resolve(args, config, "ratios", _floats, [0.1, 0.3, 1.0, 3.0, 10.0])
    seeds = _resolve(args, config, "seeds", _ints, [0, 1, 2])
    methods = tuple(_resolve(args, config, "methods", str, "soft").split())
    tolerance = _resolve(args, config, "tolerance", int, 0)
    scene = _scene_from(s)
    noise = channel.NoiseModel(s["sigma_r"], s["sigma_s"], s["quant_bits"], 0)
    rows = decoder.sweep(
        scene, codes, ratios, noise, seeds,
        budget=s["budget"], tolerance=tolerance, methods=methods,
    )
    os.makedirs(s["out"], exist_ok=True)
    tag = _config_hash({**s, "codes": codes, "ratios": ratios, "seeds": seeds})
    _write_csv(os.path.join(s["out"], "sweep.csv"), rows)
    for name in codes:
        maps = decoder.run_pipeline(
            scene, name, power=ratios[len(ratios) // 2],
            noise=channel.NoiseModel(s["sigma_r"], s["sigma_s"], s["quant_bits"], seeds[0]),
            budget=s["budget"], methods=("soft",),
        )
        errors = np.abs(maps["soft"] - scene.gt_disparity) > tolerance
        imgio.render_disparity_png(
            os.path.join(s["out"], f"errors_{name}_{tag}.png"),
            maps["soft"], valid=scene.valid, error_mask=errors,
        )
    print(f"wrote {len(rows)} sweep rows to {s['out']}/sweep.csv")
    return 0


def cmd_adaptive(args, config):
    s = _common_sim_settings(args, config)
    style = _resolve(args, config, "style", str, "xor02")
    max_iters = _resolve(args, config, "max_iters", int, 5)
    cfg = edc.vgroove_demo_config(s["rows"], s["cols"])
    scene = channel.procedural_scene(
        "v-groove-band", cfg["N"], cfg["M"], cfg["scene_params"], seed=s["scene_seed"]
    )
    cube, book = edc.build_edc_cube(cfg["N"], cfg["M"], style=style)
    noise = channel.NoiseModel(s["sigma_r"], min(s["sigma_s"], 0.02), s["quant_bits"], s["seed"])
    res = edc.adaptive_loop(
        scene, cube, book, noise, power=s["ratio"], budget=s["budget"],
        max_iters=max_iters, **cfg["mix"],
    )
    os.makedirs(s["out"], exist_ok=True)
    tag = _config_hash({**s, "style": style})
    summary = []
    for i, mask in enumerate(res.error_masks):
        imgio.render_mask_png(os.path.join(s["out"], f"error_mask_iter{i}_{tag}.png"), mask)
        imgio.write_pfm(
            os.path.join(s["out"], f"disparity_iter{i}.pfm"), res.disparity_snapshots[i]
        )
        summary.append(
            {
                "iteration": i,
                "flagged": int(mask.sum()),
                "active_columns": res.active_history[i],
                "frames_used": (i + 1) * cube.n_frames,
            }
        )
    imgio.write_pfm(os.path.join(s["out"], "disparity_final.pfm"), res.disparity)
    errors = np.abs(res.disparity - scene.gt_disparity) > 0
    imgio.render_disparity_png(
        os.path.join(s["out"], f"disparity_final_{tag}.png"),
        res.disparity, valid=scene.valid, error_mask=errors,
    )
    _write_csv(os.path.join(s["out"], "adaptive_summary.csv"), summary)
    final_err = decoder.error_rate(res.disparity, scene, 0)
    print(
        f"adaptive: {res.iterations} iterations, {res.frames_used} frames, "
        f"stop={res.stop_reason}, error={final_err:.4f}"
    )
    return 0


def cmd_mux(args, config):
    demo = _resolve(args, config, "demo", str, "events")
    out = _resolve(args, config, "out", str, "mux_out")
    os.makedirs(out, exist_ok=True)
    if demo == "events":
        chips = _resolve(args, config, "chip", str, "10100010")
        report = source_mux.event_interference_demo(own_chip=chips)
        for name in ("raw", "filtered"):
            stream = report[name]
            # the demo sensor is a single pixel row
            rows = [
                {"t": int(t), "row": 0, "col": int(p), "polarity": int(pol)}
                for t, p, pol in zip(stream.t, stream.pixel, stream.polarity)
            ] or [{"t": "", "row": "", "col": "", "polarity": ""}]
            _write_csv(os.path.join(out, f"events_{name}.csv"), rows)
        _write_csv(
            os.path.join(out, "events_report.csv"),
            [
                {
                    "own_events": report["own_events"],
                    "missed_own": report["missed_own"],
                    "false_retained": report["false_retained"],
                    "frame_overhead": report["frame_overhead"],
                }
            ],
        )
        print(
            f"events demo: missed={report['missed_own']} false={report['false_retained']} "
            f"overhead={report['frame_overhead']}x"
        )
        return 0
    if demo == "curtains":
        chip_a = _resolve(args, config, "chip_a", str, "1100")
        chip_b = _resolve(args, config, "chip_b", str, "0101")
        coupling = _resolve(args, config, "coupling", float, 1.0)
        det_a, det_b, report, layout = source_mux.curtain_demo(chip_a, chip_b, coupling=coupling)
        tag = _config_hash({"chip_a": chip_a, "chip_b": chip_b, "coupling": coupling})
        imgio.render_mask_png(os.path.join(out, f"curtain_A_detections_{tag}.png"), det_a.detected)
        imgio.render_mask_png(os.path.join(out, f"curtain_B_detections_{tag}.png"), det_b.detected)
        imgio.render_mask_png(os.path.join(out, f"curtain_A_truth_{tag}.png"), layout["hits_a"])
        imgio.render_mask_png(os.path.join(out, f"curtain_B_truth_{tag}.png"), layout["hits_b"])
        rows = [
            {"device": dev, **vals, "frame_overhead": len(chip_a)}
            for dev, vals in report.items()
        ]
        _write_csv(os.path.join(out, "curtain_report.csv"), rows)
        print(
            "curtains demo: "
            + " ".join(f"{d}: false={v['false_detections']} missed={v['missed']}" for d, v in report.items())
        )
        return 0
    raise UserError(f"unknown mux demo {demo!r}")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="slcodec", description=__doc__)
    parser.add_argument("--config", help="INI config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    cb = sub.add_parser("codebook", help="preset listing, export, random search")
    cb_sub = cb.add_subparsers(dest="action", required=True)
    cb_sub.add_parser("list").add_argument("--out")
    exp = cb_sub.add_parser("export")
    exp.add_argument("--preset", required=True)
    exp.add_argument("--out")
    srch = cb_sub.add_parser("search")
    srch.add_argument("--n", type=int, required=True)
    srch.add_argument("--k", type=int, required=True)
    srch.add_argument("--d", type=int, required=True)
    srch.add_argument("--seed", type=int, default=0)
    srch.add_argument("--budget", type=int)
    srch.add_argument("--out")

    pat = sub.add_parser("patterns", help="export projector pattern frames")
    for flag, typ in (
        ("--preset", str), ("--rows", int), ("--cols", int),
        ("--arrangement", str), ("--out", str), ("--xor-base", int),
    ):
        pat.add_argument(flag, type=typ)

    for name in ("simulate", "decode", "sweep", "adaptive", "mux"):
        p = sub.add_parser(name)
        for flag, typ in (
            ("--scene", str), ("--rows", int), ("--cols", int), ("--scene-seed", int),
            ("--preset", str), ("--ratio", float), ("--sigma-r", float),
            ("--sigma-s", float), ("--quant-bits", int), ("--budget", float),
            ("--seed", int), ("--out", str),
        ):
            p.add_argument(flag, type=typ)
        if name == "decode":
            p.add_argument("--method", choices=["soft", "hard", "list", "median"])
            p.add_argument("--t-low", type=float)
            p.add_argument("--t-high", type=float)
            p.add_argument("--window", type=int)
            p.add_argument("--tolerance", type=int)
        if name == "sweep":
            p.add_argument("--codes")
            p.add_argument("--ratios", type=_floats)
            p.add_argument("--seeds", type=_ints)
            p.add_argument("--methods")
            p.add_argument("--tolerance", type=int)
        if name == "adaptive":
            p.add_argument("--style", choices=["xor02", "gray"])
            p.add_argument("--max-iters", type=int)
        if name == "mux":
            p.add_argument("--demo", choices=["events", "curtains"])
            p.add_argument("--chip")
            p.add_argument("--chip-a")
            p.add_argument("--chip-b")
            p.add_argument("--coupling", type=float)
    return parser


_DISPATCH = {
    "codebook": cmd_codebook,
    "patterns": cmd_patterns,
    "simulate": cmd_simulate,
    "decode": cmd_decode,
    "sweep": cmd_sweep,
    "adaptive": cmd_adaptive,
    "mux": cmd_mux,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = _config_section(args.config, args.command)
        return _DISPATCH[args.command](args, config)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigurationError, SearchFailure, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
