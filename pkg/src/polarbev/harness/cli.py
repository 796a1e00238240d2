"""Command line entry point: ``polarbev <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numba
import numpy as np

from polarbev.errors import ConfigError, InvariantViolation
from polarbev.polar_grid import CartGridSpec, PolarGridSpec, PoolingIndex, grid_spec_from_dict

log = logging.getLogger("polarbev")

EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _grid(path, kind: str):
    if path is None:
        return PolarGridSpec() if kind == "polar" else CartGridSpec()
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: grid spec must be a JSON object")
    doc.setdefault("kind", kind)
    if doc["kind"] != kind:
        raise ConfigError(f"{path}: expected a {kind} grid, found {doc['kind']!r}")
    return grid_spec_from_dict(doc)


def _scene(args):
    from polarbev.harness.scene import default_scene, load_scene

    if getattr(args, "scene", None):
        return load_scene(args.scene, args.seed)
    return default_scene(0 if args.seed is None else args.seed,
                         frames=getattr(args, "frames", None) or 1)


def _numbers(text: str, cast):
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


# ------------------------------------------------------------------ commands


def cmd_density(args) -> None:
    from polarbev.harness.density import DEFAULT_INTERVALS, cell_center_radii, grid_density

    spec = _grid(args.spec, args.grid)
    if args.intervals:
        edges = _numbers(args.intervals, float)
        if len(edges) < 2:
            raise ConfigError("--intervals needs at least two edges")
        intervals = list(zip(edges[:-1], edges[1:]))
    else:
        intervals = DEFAULT_INTERVALS
    prof = grid_density(spec, intervals)

    radii = cell_center_radii(spec)
    lo, hi = prof.intervals[0][0], prof.intervals[-1][1]
    expected = int(np.count_nonzero((radii >= lo) & (radii < hi)))
    recovered = float(np.sum(prof.densities * prof.areas))
    if int(prof.counts.sum()) != expected or not math.isclose(recovered, expected, rel_tol=1e-12):
        raise InvariantViolation(f"density cross-check failed: {recovered} vs {expected} cells")
    if np.any(prof.densities < 0):
        raise InvariantViolation("negative density")

    _write_csv(args.out, ("grid", "d_lo", "d_hi", "cells", "area_m2", "density"),
               [(prof.kind, repr(a), repr(b), n, repr(area), repr(d)) for a, b, n, area, d in prof.rows()])
    if args.plot:
        from polarbev.harness.plots import plot_density

        plot_density([prof], args.plot)


def cmd_revolve(args) -> None:
    from polarbev.harness.pipeline import REVOLVE_NOTE, RevolveRow, revolve_test

    log.info(REVOLVE_NOTE)
    scene = _scene(args)
    polar = _grid(args.polar_spec, "polar")
    cart = _grid(args.cart_spec, "cart")
    results = []
    for k in _numbers(args.k, int):
        if not 0 <= k < len(scene.rig):
            raise ConfigError(f"k must be in [0, {len(scene.rig)})")
        results.append(revolve_test(scene, k, polar, cart))
    rows = [r.row() for r in results]
    _write_csv(args.out, RevolveRow.header, rows)
    if args.plot:
        from polarbev.harness.plots import plot_residuals

        plot_residuals(rows, RevolveRow.header, args.plot, ["polar_residual", "cart_residual"],
                       REVOLVE_NOTE)
    _check_reports([r.report for r in results])


def _check_reports(reports) -> None:
    for r in reports:
        if r.degenerate:
            log.warning("delta=%g: constant maps, comparison is degenerate", r.delta)
        elif r.mode == "interpolated":
            log.warning("delta=%g is off the azimuth lattice; interpolated check", r.delta)
        if not r.polar_ok:
            raise InvariantViolation(
                f"polar residual {r.polar_residual:.3g} >= {r.tolerance:.3g} at delta={r.delta:g}")


def cmd_equivariance(args) -> None:
    from polarbev.harness.pipeline import EquivarianceReport, equivariance_report

    scene = _scene(args)
    polar = _grid(args.polar_spec, "polar")
    cart = _grid(args.cart_spec, "cart")
    reports = [equivariance_report(scene, polar, cart, b * polar.delta_theta)
               for b in _numbers(args.delta_bins, float)]
    _write_csv(args.out, EquivarianceReport.header, [r.row() for r in reports])
    if args.plot:
        from polarbev.harness.plots import plot_residuals

        plot_residuals([r.row() for r in reports], EquivarianceReport.header, args.plot,
                       ["polar_residual", "cart_residual"])
    _check_reports(reports)


def cmd_pipeline(args) -> None:
    from polarbev.camera import generate_frustum
    from polarbev.codec import write_boxes_jsonl
    from polarbev.harness.pipeline import run_pipeline
    from polarbev.polar_grid import build_pooling_index

    scene = _scene(args)
    spec = _grid(args.grid_spec, "polar")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    index = None
    if args.index_cache:
        frustum = generate_frustum(scene.feature_size, scene.stride, scene.depth_bins)
        cache = Path(args.index_cache)
        if cache.exists():
            index = PoolingIndex.load(cache, spec.shape, len(scene.rig), frustum.n_nodes)
        else:
            index = build_pooling_index(frustum, scene.rig, spec)
            index.save(cache)

    res = run_pipeline(scene, spec, frames=args.frames, sae=args.sae, index=index)
    rows = []
    for f, (bev, (mass, fmass)) in enumerate(zip(res.frames, res.masses)):
        rows.append((f, repr(scene.trajectory[f][0]), repr(mass), repr(fmass),
                     repr(float(bev.data.max())), int(np.count_nonzero(bev.data.any(axis=0))),
                     res.n_dropped))
    _write_csv(out / "frames.csv",
               ("frame", "timestamp", "bev_mass", "frustum_mass", "max", "nonzero_bins", "dropped_nodes"),
               rows)
    target_rows = []
    for n, (ci, cj) in enumerate(res.heatmap.centers):
        b = res.boxes[res.heatmap.box_indices[n]]
        o_t, o_r = res.heatmap.offsets[n]
        target_rows.append((b.class_id, ci, cj, repr(o_t), repr(o_r), *(repr(v) for v in b.params()),
                            res.heatmap.radii[n]))
    _write_csv(out / "targets.csv",
               ("class_id", "c_theta", "c_r", "o_theta", "o_r", "theta", "r", "z", "w", "l", "h",
                "yaw", "v_theta", "v_r", "radius"),
               target_rows)
    write_boxes_jsonl(res.boxes, out / "boxes_polar.jsonl")
    np.save(out / "bev.npy", res.output.data)
    np.save(out / "heatmap.npy", res.heatmap.data)
    if args.plot:
        from polarbev.harness.plots import plot_bev

        plot_bev(res.output.data, args.plot, "polar BEV (theta x r)")


def cmd_scene(args) -> None:
    from polarbev.harness.scene import default_scene

    scene = default_scene(0 if args.seed is None else args.seed, n_objects=args.objects,
                          frames=args.frames)
    Path(args.out).write_text(json.dumps(scene.to_dict(), indent=1))


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (u64)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for pooling")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="polarbev", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("density", parents=[common], help="grid density per distance band")
    d.add_argument("--grid", choices=("polar", "cart"), default="polar")
    d.add_argument("--spec", help="grid spec JSON")
    d.add_argument("--intervals", help="comma-separated band edges in meters")
    d.add_argument("--out", required=True)
    d.add_argument("--plot", help="SVG output path")
    d.set_defaults(func=cmd_density)

    r = sub.add_parser("revolve", parents=[common], help="revolving test on a synthetic rig")
    r.add_argument("--scene")
    r.add_argument("--k", default="1", help="slot offset(s), comma-separated")
    r.add_argument("--polar-spec")
    r.add_argument("--cart-spec")
    r.add_argument("--out", required=True)
    r.add_argument("--plot")
    r.set_defaults(func=cmd_revolve)

    e = sub.add_parser("equivariance", parents=[common], help="polar vs Cartesian rotation residuals")
    e.add_argument("--delta-bins", default="64", help="rotation(s) in azimuth bins, comma-separated")
    e.add_argument("--scene")
    e.add_argument("--polar-spec")
    e.add_argument("--cart-spec")
    e.add_argument("--out", required=True)
    e.add_argument("--plot")
    e.set_defaults(func=cmd_equivariance)

    q = sub.add_parser("pipeline", parents=[common], help="run the full pipeline on a scene")
    q.add_argument("--scene")
    q.add_argument("--frames", type=int, default=None)
    q.add_argument("--grid-spec")
    q.add_argument("--sae", choices=("none", "heatmap"), default="none")
    q.add_argument("--index-cache", help="PBIX file to load or create")
    q.add_argument("--out", required=True)
    q.add_argument("--plot")
    q.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("scene", parents=[common], help="write a default synthetic scene JSON")
    s.add_argument("--objects", type=int, default=12)
    s.add_argument("--frames", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_scene)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must fit in u64")
        if args.threads is not None:
            if not 1 <= args.threads <= numba.config.NUMBA_NUM_THREADS:
                raise ConfigError(f"--threads must be in [1, {numba.config.NUMBA_NUM_THREADS}]"
                                  " (raise NUMBA_NUM_THREADS for more)")
            numba.set_num_threads(args.threads)
        args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
