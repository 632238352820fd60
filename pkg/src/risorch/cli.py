"""Command-line entry point: ``compile``, ``run`` and ``snrmap``.

One INI file drives everything; flags only pick the file, the output
directory, the worker count, the experiment family and a seed override.
Every output is written under a temporary name and renamed into place, so a
failed command leaves nothing half-written behind.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from typing import List, Optional

import numpy as np

from .codebook import compile_codebook, load_codebook, save_codebook, scene_fingerprint
from .config import RunConfig, load_config
from .em import GridSpec, RisState, snr_map, solve_incident_field
from .errors import ConfigurationError, FingerprintMismatchError, RisError
from .evaluation import EXPERIMENTS, run_experiments
from .orchestrator import Tier, allocate, apply_energy_off
from .scene import build_geometry

log = logging.getLogger("risorch")


@contextmanager
def _staged_file(path):
    """Yield a temp path next to ``path``; rename it into place on success."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.out:
        cfg.output_dir = args.out
    if args.seed_override is not None:
        cfg.experiment = dataclasses.replace(cfg.experiment, seed=args.seed_override)
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg


def _load_matching_codebook(cfg: RunConfig):
    path = cfg.codebook_path
    if not os.path.isdir(path):
        raise ConfigurationError(f"no codebook at {path}; run 'compile' with this config first")
    try:
        return load_codebook(path, cfg.scene)
    except FingerprintMismatchError as exc:
        raise FingerprintMismatchError(
            f"{exc}; the scene changed since compilation, rerun 'compile' with this config") from exc


def cmd_compile(args, cfg: RunConfig) -> str:
    codebook = compile_codebook(cfg.scene, cfg.locations, cfg.rounds, cfg.smoothing, workers=args.workers)
    final = cfg.codebook_path
    parent = os.path.dirname(os.path.abspath(final))
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".tmp-codebook-", dir=parent)
    try:
        save_codebook(codebook, tmp)
        if os.path.isdir(final):
            shutil.rmtree(final)
        os.replace(tmp, final)
    finally:
        if os.path.isdir(tmp):
            shutil.rmtree(tmp)
    return f"compile entries={len(codebook)} elements={codebook.n_elements} fingerprint={codebook.fingerprint}"


def run_manifest(cfg: RunConfig, experiments, fingerprint: str, compiler_version: str) -> str:
    """Text echoing everything needed to reproduce a run (worker count excluded on purpose)."""
    resolved = {
        "seed": cfg.experiment.seed,
        "experiments": list(experiments),
        "fingerprint": fingerprint,
        "compiler_version": compiler_version,
        "scene": cfg.scene.to_dict(),
        "experiment": cfg.experiment.to_dict(),
        "codebook": {"entries": int(len(cfg.locations)), "rounds": cfg.rounds, "smoothing": cfg.smoothing},
    }
    body = json.dumps(resolved, indent=2, sort_keys=True)
    return f"# resolved\n{body}\n# config (verbatim)\n{cfg.text}"


def cmd_run(args, cfg: RunConfig) -> str:
    codebook = _load_matching_codebook(cfg)
    experiments = EXPERIMENTS if args.experiment == "all" else (args.experiment,)
    report = run_experiments(cfg.experiment, codebook, cfg.scene, experiments, workers=args.workers)

    writers = {"alloc": report.write_alloc_csv, "ee": report.write_ee_csv,
               "admission": report.write_admission_csv}
    outputs = [(os.path.join(cfg.output_dir, f"{e}.csv"), writers[e]) for e in experiments]
    manifest = run_manifest(cfg, experiments, codebook.fingerprint, codebook.version)

    staged: List[str] = []
    try:
        for path, write in outputs:
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=cfg.output_dir)
            os.close(fd)
            staged.append(tmp)
            write(tmp)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=cfg.output_dir)
        os.close(fd)
        staged.append(tmp)
        with open(tmp, "w") as fh:
            fh.write(manifest)
        for tmp, path in zip(staged, [p for p, _ in outputs] + [os.path.join(cfg.output_dir, "run.manifest")]):
            os.replace(tmp, path)
    finally:
        for tmp in staged:
            if os.path.exists(tmp):
                os.remove(tmp)

    parts = [f"run experiments={','.join(experiments)} seed={cfg.experiment.seed}",
             f"realizations={cfg.experiment.realizations}"]
    for K in (10,) if 10 in cfg.experiment.user_counts else cfg.experiment.user_counts[:1]:
        if "alloc" in experiments and 1 in cfg.experiment.bits:
            for m in ("baseline", "influence"):
                c = report.correlation(m, K, 1)
                if c is not None:
                    parts.append(f"corr_{m}_K{K}_1bit={c:.4f}")
    return " ".join(parts)


def _snrmap_state(cfg: RunConfig, geometry):
    spec = cfg.snrmap
    n = geometry.n_elements
    if spec.source == "off":
        return RisState.dark(n)
    codebook = _load_matching_codebook(cfg)
    if spec.source == "entry":
        if not 0 <= spec.entry < len(codebook):
            raise ConfigurationError(f"[snrmap] entry {spec.entry} out of range 0..{len(codebook) - 1}")
        return RisState.from_phases(codebook[spec.entry].phases)
    # alloc: the common configuration for the listed users
    if not spec.users:
        raise ConfigurationError("[snrmap] source=alloc needs 'users'")
    tiers = spec.tiers or (1,) * len(spec.users)
    if len(tiers) != len(spec.users):
        raise ConfigurationError("[snrmap] 'users' and 'tiers' differ in length")
    bad = [u for u in spec.users if not 0 <= u < len(codebook)]
    if bad:
        raise ConfigurationError(f"[snrmap] user entries out of range: {bad}")
    entries = [codebook[u] for u in spec.users]
    exp = cfg.experiment
    cc = allocate(entries, [Tier.of(t, exp.payment_factors) for t in tiers],
                  dataclasses.replace(exp.alloc, bits=spec.bits))
    if spec.energy_off:
        cc = apply_energy_off(cc, [e.influence for e in entries], exp.ee)
    return cc.to_state()


def cmd_snrmap(args, cfg: RunConfig) -> str:
    spec = cfg.snrmap
    L = cfg.scene.room_side
    geometry = build_geometry(cfg.scene)
    state = _snrmap_state(cfg, geometry)
    u_range = spec.u_range or (0.0, L)
    v_range = spec.v_range or (0.0, L)
    grid = GridSpec.plane(spec.plane, spec.coord, u_range, v_range, spec.resolution, spec.resolution)
    if np.any(grid.points() < 0) or np.any(grid.points() > L):
        raise ConfigurationError(f"observation plane {spec.plane}={spec.coord} leaves the room [0, {L}]")
    e_inc = solve_incident_field(cfg.scene, geometry, state).field if np.any(state.amplitude) \
        else np.zeros(geometry.n_elements, dtype=complex)
    raster = snr_map(cfg.scene, geometry, state, grid, e_inc=e_inc)
    path = os.path.join(cfg.output_dir, "snrmap.csv")
    with _staged_file(path) as tmp:
        raster.write_csv(tmp)
    i = int(np.argmax(raster.values))
    peak = grid.points()[i]
    return (f"snrmap source={spec.source} points={raster.values.size} max_db={raster.values.flat[i]:.3f} "
            f"at=({peak[0]:.4f},{peak[1]:.4f},{peak[2]:.4f})")


COMMANDS = {"compile": cmd_compile, "run": cmd_run, "snrmap": cmd_snrmap}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risorch", description="Compile RIS codebooks and run experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("compile", "compile and save the codebook"),
                            ("run", "run Monte Carlo experiments over a compiled codebook"),
                            ("snrmap", "write an SNR raster for one surface state")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "run":
            p.add_argument("--experiment", choices=EXPERIMENTS + ("all",), default="all")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 1
    try:
        cfg = _resolve(args)
        summary = COMMANDS[args.command](args, cfg)
    except (RisError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
