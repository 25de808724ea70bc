"""Command line interface: ``dispcq <group> <command>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import sys
import warnings
from pathlib import Path

import click
import numpy as np

from .errors import ConfigError, DomainError, MeshError, NumericalError


def _guard(fn):
    """Map library errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, DomainError, MeshError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except NumericalError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from None


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Time-domain scattering by dispersive obstacles (CQ + RT0 boundary elements)."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


# ---- materials ------------------------------------------------------------------


@main.group()
def materials():
    """Material law utilities."""


@materials.command("check")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="Audit the materials of a run config.")
@click.option("--side", type=click.Choice(["interior", "exterior"]), default="interior", show_default=True)
@click.option("--summary", is_flag=True, help="One row per documented law family instead of the grid.")
@_guard
def materials_check(config, side, summary):
    """Passivity audit over the standard grid.

    Emits s_re,s_im,margin_eps,margin_mu,re_wavenumber for one material
    pair (default: the fractional interior law); exits 3 if any margin is
    below -1e-12.
    """
    from .materials import audit_grid, documented_laws, fractional_interior, passivity_audit, passivity_margin, wavenumber

    if summary:
        bad = False
        click.echo("law,points,min_margin,ok")
        for name, law in documented_laws().items():
            s, margin = passivity_audit(law)
            ok = bool(margin.min() >= -1e-12)
            bad |= not ok
            click.echo(f"{name},{len(s)},{margin.min():.6e},{ok}")
        if bad:
            sys.exit(3)
        return
    if config:
        from .experiments import RunConfig

        interior, exterior = RunConfig.load(config).materials()
        pair = interior if side == "interior" else exterior
    else:
        from .materials import MaterialPair

        pair = fractional_interior() if side == "interior" else MaterialPair.vacuum()
    grid = audit_grid()
    me = passivity_margin(pair.epsilon, grid)
    mm = passivity_margin(pair.mu, grid)
    kr = np.real(wavenumber(pair, grid))
    click.echo("s_re,s_im,margin_eps,margin_mu,re_wavenumber")
    for s, a, b, k in zip(grid, me, mm, kr):
        click.echo(f"{float(s.real)!r},{float(s.imag)!r},{float(a)!r},{float(b)!r},{float(k)!r}")
    if min(me.min(), mm.min()) < -1e-12:
        sys.exit(3)


# ---- cq -------------------------------------------------------------------------


@main.group()
def cq():
    """Convolution quadrature utilities."""


@cq.command("weights")
@click.option("--stages", "-m", default=2, show_default=True, type=click.IntRange(1, 3))
@click.option("--N", "N", default=16, show_default=True, type=click.IntRange(1))
@click.option("--T", "T", default=1.0, show_default=True, type=float)
@click.option("--alpha", default=1.0, show_default=True, type=float, help="Symbol s^(-alpha).")
@click.option("--out", type=click.Path(dir_okay=False), help="CSV path (default stdout).")
@_guard
def cq_weights_cmd(stages, N, T, alpha, out):
    """Weights of K(s) = s^(-alpha) as CSV n,re,im (n,i,j,re,im for m > 1)."""
    from .cq import CQGrid, cq_weights, radau_tableau

    W = cq_weights(lambda s: s ** (-alpha), radau_tableau(stages), CQGrid(T, N))
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        wr = csv.writer(fh)
        if stages == 1:
            wr.writerow(["n", "re", "im"])
            for n in range(W.shape[0]):
                wr.writerow([n, repr(float(W[n, 0, 0].real)), repr(float(W[n, 0, 0].imag))])
        else:
            wr.writerow(["n", "i", "j", "re", "im"])
            for n in range(W.shape[0]):
                for i in range(W.shape[1]):
                    for j in range(W.shape[2]):
                        wr.writerow([n, i, j, repr(float(W[n, i, j].real)), repr(float(W[n, i, j].imag))])
    finally:
        if out:
            fh.close()


@cq.command("test-scalar")
@click.option("--stages", "-m", default=2, show_default=True, type=click.IntRange(1, 3))
@click.option("--N-list", "n_list", default="16,32,64,128", show_default=True)
@_guard
def cq_test_scalar(stages, n_list):
    """Order study of K(s) = 1/s against the exact antiderivative."""
    from .experiments import scalar_order_study

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = scalar_order_study(stages, _int_list(n_list))
    click.echo("tau,error,order")
    prev = None
    for r in rep.rows:
        order = "" if prev is None else f"{np.log2(prev[1] / r[2]) / np.log2(prev[0] / r[1]):.4f}"
        click.echo(f"{r[1]!r},{r[2]:.6e},{order}")
        prev = (r[1], r[2])
    click.echo(f"# fitted order {rep.slopes['err_max']}")


# ---- oracle ------------------------------------------------------------------


@main.group()
def oracle():
    """Analytic references."""


@oracle.command("mie")
@click.option("--s", "s", default="1", show_default=True, help="Complex frequency, e.g. 1+2j.")
@click.option("--lmax", default=15, show_default=True, type=click.IntRange(1, 60))
@click.option("--config", type=click.Path(exists=True, dir_okay=False), help="Take materials from a run config.")
@_guard
def oracle_mie(s, lmax, config):
    """Modal reflection coefficients of the unit sphere as CSV ell,pol,re,im,tail."""
    from .materials import MaterialPair, fractional_interior
    from .oracle import mie_table

    try:
        s_val = complex(s.replace(" ", ""))
    except ValueError:
        raise ConfigError(f"cannot parse frequency {s!r}") from None
    if config:
        from .experiments import RunConfig

        interior, exterior = RunConfig.load(config).materials()
    else:
        interior, exterior = fractional_interior(), MaterialPair.vacuum()
    click.echo("ell,pol,re,im,tail")
    for l, pol, R, tail in mie_table(s_val, interior, exterior, lmax):
        click.echo(f"{l},{pol},{R.real!r},{R.imag!r},{tail:.3e}")


# ---- mesh --------------------------------------------------------------------


@main.group()
def mesh():
    """Surface mesh utilities."""


@mesh.command("info")
@click.argument("path", required=False, type=click.Path(exists=True, dir_okay=False))
@click.option("--sphere", "level", type=click.IntRange(0, 7), help="Icosphere refinement level.")
@click.option("--two-cubes", "gap", type=float, help="Two cubes with this gap.")
@click.option("--divisions", default=1, show_default=True, type=click.IntRange(1))
@click.option("--format", "fmt", type=click.Choice(["off", "gmsh"]))
@_guard
def mesh_info(path, level, gap, divisions, fmt):
    """Counts, mesh size, Euler characteristic and volume as JSON."""
    from .mesh import icosphere, load_mesh, two_cubes

    chosen = [x is not None for x in (path, level, gap)]
    if sum(chosen) != 1:
        raise ConfigError("give exactly one of PATH, --sphere or --two-cubes")
    if path:
        m = load_mesh(path, fmt)
    elif level is not None:
        m = icosphere(level)
    else:
        m = two_cubes(gap, divisions)
    info = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in m.info().items()}
    click.echo(json.dumps(info, indent=2))


# ---- runs --------------------------------------------------------------------


@main.command("run")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@_guard
def run_cmd(config, outdir):
    """Solve one configuration and write fields, densities and a manifest."""
    from .experiments import RunConfig, run

    cfg = RunConfig.load(config)
    res = run(cfg, outdir)
    click.echo(f"config {cfg.hash}: {res.manifest['unknowns']} unknowns, N={res.manifest['N']}, "
               f"{res.manifest['timings']['total_s']:.1f} s -> {outdir}")


def _report(rep, outdir, name):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rep.write_csv(out / f"{name}.csv")
    (out / f"{name}.json").write_text(json.dumps(rep.to_dict(), indent=2))
    click.echo(",".join(rep.columns))
    for r in rep.rows:
        click.echo(",".join(f"{v:.6e}" if isinstance(v, float) else str(v) for v in r))
    for k, v in rep.slopes.items():
        flag = "" if rep.monotone.get(k, True) else "  (non-monotone)"
        click.echo(f"# slope {k}: {v}{flag}")


@main.command("converge-time")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--N-list", "n_list", default="16,32,64,128", show_default=True)
@click.option("--ref", "n_ref", default=256, show_default=True, type=click.IntRange(2))
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@_guard
def converge_time_cmd(config, n_list, n_ref, outdir):
    """Time-step ladder against a finer-step self-reference."""
    from .experiments import RunConfig, converge_time

    rep = converge_time(RunConfig.load(config), _int_list(n_list), n_ref)
    _report(rep, outdir, "converge_time")


@main.command("converge-space")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--levels", default="0,1,2", show_default=True)
@click.option("--ref", "ref_level", default=3, show_default=True, type=click.IntRange(1, 7))
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@_guard
def converge_space_cmd(config, levels, ref_level, outdir):
    """Mesh ladder against a finer-level self-reference."""
    from .experiments import RunConfig, converge_space

    rep = converge_space(RunConfig.load(config), _int_list(levels), ref_level)
    _report(rep, outdir, "converge_space")


@main.command("slice")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "outdir", required=True, type=click.Path(file_okay=False))
@_guard
def slice_cmd(config, outdir):
    """Fields on the configured plane grid (default y = 0.5) as slice.csv."""
    from .experiments import RunConfig, run

    cfg = RunConfig.load(config)
    data = cfg.data
    plane = data["targets"].get("plane") or {}
    cfg = cfg.with_updates(**{"targets.plane": {"axis": "y", "value": 0.5, **plane},
                              "outputs.slice": True})
    res = run(cfg, outdir)
    click.echo(f"slice with {len(res.slice.points) if res.slice else 0} points -> {outdir}/slice.csv")


if __name__ == "__main__":
    main()
