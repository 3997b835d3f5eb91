"""Command line driver.

    stadium-otoc [--config PATH] [--seed N] [--force] [--threads N] COMMAND

Commands write CSV series with JSON sidecars under the configured output
directory and reuse cached artifacts unless ``--force`` is given.  Exit codes:
0 success, 1 invalid input or configuration, 2 computation failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_INVALID, EXIT_COMPUTE = 0, 1, 2
COMMANDS = ("eigensolve", "classical-otoc", "quantum-otoc", "semiclassical", "lyapunov",
            "periodic-orbits", "compare", "figure-data")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stadium-otoc", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", type=Path, help="INI run configuration (defaults are used if omitted)")
    p.add_argument("--seed", type=int, help="override the Monte Carlo seed")
    p.add_argument("--force", action="store_true", help="recompute cached artifacts")
    p.add_argument("--threads", type=int,
                   help="BLAS/OpenMP threads (also read from STADIUM_OTOC_THREADS)")
    p.add_argument("--output", type=Path, help="override the output directory")
    p.add_argument("command", choices=COMMANDS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads or os.environ.get("STADIUM_OTOC_THREADS")
    if threads:
        # must happen before numpy loads its BLAS
        for var in THREAD_VARS:
            os.environ[var] = str(threads)
    from .config import ConfigError, RunConfig
    from .orbits import OrbitError
    from .semiclassics import FitError
    from .series import SeriesFormatError
    from .spectral import EigensolveError, FingerprintMismatch

    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.output is not None:
            cfg.output_dir = str(args.output)
        cfg.validate()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    runner = Runner(cfg, force=args.force)
    try:
        getattr(runner, args.command.replace("-", "_"))()
    except (ConfigError, SeriesFormatError, FingerprintMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (EigensolveError, OrbitError, FitError, ArithmeticError, RuntimeError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


def _tag(log2_kT: float) -> str:
    return f"j{log2_kT:g}"


class Runner:
    """One method per command; artifacts live under ``cfg.output_dir``."""

    def __init__(self, cfg, force: bool = False):
        self.cfg = cfg
        self.force = force
        self.out = Path(cfg.output_dir)

    # -- helpers ------------------------------------------------------------
    def _meta(self, **extra) -> dict:
        from . import __version__

        c = self.cfg
        return {"config_hash": c.digest(), "seed": c.seed, "code_version": __version__,
                "geometry": c.geometry.fingerprint(), "m": c.m, "hbar": c.hbar,
                "units_note": "m and hbar as configured; the default m=1/2, hbar=1 gives E = k^2",
                **extra}

    def _provenance(self, command: str, **extra) -> None:
        path = self.out / "provenance" / f"{command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        from . import __version__

        rec = {"command": command, "config_hash": self.cfg.digest(), "seed": self.cfg.seed,
               "code_version": __version__, "finished": time.strftime("%Y-%m-%dT%H:%M:%S"), **extra}
        path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")

    def _write_json(self, rel: str, obj) -> Path:
        from .series import _jsonable

        path = self.out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
        return path

    def _solver_key(self) -> dict:
        c = self.cfg
        return {"geometry": c.geometry.fingerprint(), "h": c.h, "n_basis": c.n_basis, "order": c.order,
                "ghost": c.ghost, "m": c.m, "hbar": c.hbar}

    def _temperatures(self):
        c = self.cfg
        return list(zip(c.log2_kT, c.kT_values))

    # -- commands -------------------------------------------------------------
    def eigensolve(self):
        import numpy as np

        from .spectral import eigensolve, x_matrix

        c = self.cfg
        ops = self.out / "operators.npz"
        key = json.dumps(self._solver_key(), sort_keys=True)
        if ops.exists() and not self.force:
            with np.load(ops) as z:
                if str(z["key"]) == key:
                    print(f"cached: {ops}")
                    return
        t0 = time.time()
        basis = eigensolve(c.geometry, c.h, c.n_basis, c.n_keep, c.units, c.order, c.ghost)
        elapsed = time.time() - t0
        X = x_matrix(basis)
        basis.save(self.out / "basis.npz")
        np.savez(ops, key=np.array(key), energies=basis.energies, X=X.data,
                 fingerprint=np.array(basis.fingerprint), n_keep=np.array(c.n_keep),
                 scheme=np.array(basis.scheme))
        diag = {k: v for k, v in basis.diagnostics.items()}
        self._write_json("eigensolve.json", {**self._meta(), "seconds": elapsed, "scheme": basis.scheme,
                                              "E1": basis.energies[0], "E_last": basis.energies[-1],
                                              **diag})
        self._provenance("eigensolve", seconds=elapsed)
        print(f"{basis.n_basis} levels up to E={basis.energies[-1]:.6g} in {elapsed:.1f}s -> {ops}")

    def _operators(self):
        import numpy as np

        from .spectral import EigenBasis, OperatorMatrix, p_matrix

        ops = self.out / "operators.npz"
        if not ops.exists():
            raise FileNotFoundError(f"{ops} missing; run `stadium-otoc eigensolve` first")
        key = json.dumps(self._solver_key(), sort_keys=True)
        with np.load(ops) as z:
            if str(z["key"]) != key:
                from .spectral import FingerprintMismatch

                raise FingerprintMismatch(f"{ops} was built for a different solver setup; use --force")
            E, Xd, fp, scheme = z["energies"], z["X"], str(z["fingerprint"]), str(z["scheme"])
        c = self.cfg
        basis = EigenBasis(E, None, c.h, c.geometry.fingerprint(), units=c.units, n_keep=c.n_keep,
                           scheme=scheme)
        if basis.fingerprint != fp:
            from .spectral import FingerprintMismatch

            raise FingerprintMismatch(f"{ops}: stored fingerprint does not match its energies")
        X = OperatorMatrix(Xd, "X", fp)
        return basis, X, p_matrix(X, basis)

    def classical_otoc(self):
        import numpy as np

        from .classical import ThermalEnsemble, analytic_anchors, o_classical

        c = self.cfg
        g = c.geometry
        for j, kT in self._temperatures():
            path = self.out / "classical" / f"O_cl_{_tag(j)}.csv"
            if path.exists() and not self.force:
                continue
            ens = ThermalEnsemble.from_kT(kT, c.units)
            t = c.ell_grid / ens.vtilde
            ss = np.random.SeedSequence([c.seed, int(round(j * 1000))])
            s = o_classical(ens, g, t, c.n_samples, seed=ss, n_blocks=c.n_blocks)
            anchor, quad = analytic_anchors(ens, g)
            s.meta.update(self._meta(log2_kT_over_E0=j, anchor_t0=anchor, quadratic_coefficient=quad))
            s.meta["seed"] = c.seed
            s.write(path)
            print(f"classical kT/E0=2^{j:g}: O(0)={s.values[0]:.6g}+-{s.stderr[0]:.2g} "
                  f"(anchor {anchor:.6g}) -> {path}")
        self._provenance("classical-otoc")

    def quantum_otoc(self):
        import warnings

        from .quantum import LeakageWarning, ThermalWeights, otoc_multi

        c = self.cfg
        basis, X, P = self._operators()
        for j, kT in self._temperatures():
            path = self.out / "quantum" / f"C_{_tag(j)}.csv"
            if path.exists() and not self.force:
                continue
            w = ThermalWeights.from_kT(basis, kT)
            t = c.ell_grid / w.vtilde
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", LeakageWarning)
                q = otoc_multi(X, P, basis, [w], t)[0]
            for wn in caught:
                print(f"warning: {wn.message}", file=sys.stderr)
            for name in ("O1", "O1_imag", "O2", "O3", "C"):
                s = q.series(name)
                s.meta.update(self._meta(log2_kT_over_E0=j, identity_residual=q.identity_residual))
                s.write(self.out / "quantum" / f"{name}_{_tag(j)}.csv")
            print(f"quantum kT/E0=2^{j:g}: C(0)={q.C[0]:.6g}, leakage {w.leakage:.1e} -> {path}")
        self._provenance("quantum-otoc")

    def semiclassical(self):
        from .classical import ThermalEnsemble
        from .semiclassics import mss_bound_check, predict

        c = self.cfg
        reports = []
        for j, kT in self._temperatures():
            ens = ThermalEnsemble.from_kT(kT, c.units)
            pred = predict(ens, c.lambda_g, c.ell_grid / ens.vtilde)
            s = pred.series()
            s.meta.update(self._meta(log2_kT_over_E0=j))
            s.write(self.out / "semiclassical" / f"C_sc_{_tag(j)}.csv")
            fit = None
            qpath = self.out / "quantum" / f"C_{_tag(j)}.csv"
            if qpath.exists():
                from .semiclassics import fit_growth
                from .series import OtocSeries

                fit = fit_growth(OtocSeries.read(qpath), c.growth_window, vtilde=ens.vtilde)
            rep = mss_bound_check(ens, c.lambda_g, fit).as_dict()
            rep["log2_kT_over_E0"] = j
            reports.append(rep)
        self._write_json("semiclassical/bound_report.json", {**self._meta(), "reports": reports})
        self._provenance("semiclassical")
        print(f"semiclassical predictions for {len(reports)} temperatures")

    def lyapunov(self):
        from dataclasses import asdict

        from .dynamics import lyapunov_geometric

        c = self.cfg
        est = lyapunov_geometric(c.geometry, c.lyap_n_traj, c.lyap_length, c.lyap_renorm, seed=c.seed)
        self._write_json("lyapunov.json", {**self._meta(), **asdict(est),
                                           "lambda_time_at_unit_speed": est.lambda_time})
        self._provenance("lyapunov")
        print(f"lambda_g = {est.lambda_g:.4f} +- {est.stderr:.4f} per unit length")

    def periodic_orbits(self):
        from .orbits import load_library, orbit_library, po_correction, save_library

        c = self.cfg
        g = c.geometry
        lib_path = self.out / "orbits" / "library.json"
        if lib_path.exists() and not self.force:
            orbits = load_library(g, lib_path, c.nu_override)
        else:
            orbits = orbit_library(g, c.n_orbits, seed=c.orbit_seed)
            for o in orbits:
                if o.label in c.nu_override:
                    o.nu = c.nu_override[o.label]
            save_library(orbits, lib_path)
        usable = [o for o in orbits if o.unstable]
        for o in orbits:
            if not o.unstable:
                print(f"note: {o.label} is marginal and excluded from the correction")
        for j, kT in self._temperatures():
            vt = (kT / c.m) ** 0.5
            s = po_correction(usable, c.p_max, 1.0 / kT, c.ell_grid / vt, c.units)
            s.meta.update(self._meta(log2_kT_over_E0=j))
            s.write(self.out / "orbits" / f"po_correction_{_tag(j)}.csv")
        self._provenance("periodic-orbits")
        print(f"{len(orbits)} orbits -> {lib_path}")

    def _load_family(self, sub: str, prefix: str) -> dict:
        from .series import OtocSeries

        out = {}
        for j, kT in self._temperatures():
            p = self.out / sub / f"{prefix}_{_tag(j)}.csv"
            if p.exists():
                out[kT] = OtocSeries.read(p)
        return out

    def compare(self):
        import numpy as np

        from .analysis import compare_curves, fit_xi
        from .classical import ThermalEnsemble
        from .semiclassics import fit_growth, growth_rate_predicted, saturation_model

        c = self.cfg
        cl = self._load_family("classical", "O_cl")
        quantum = {q: self._load_family("quantum", q) for q in ("O1", "O2", "O3", "C")}
        if not cl and not quantum["C"]:
            raise FileNotFoundError("no classical or quantum series found; run those commands first")
        report = {**self._meta(), "components_vs_classical": [], "growth": [], "xi": {}}
        for kT, s_cl in cl.items():
            for q in ("O1", "O2", "O3"):
                if kT in quantum[q]:
                    cmp = compare_curves(s_cl, quantum[q][kT], c.compare_window, kT, kT)
                    report["components_vs_classical"].append(
                        {"kT": kT, "component": q, "max_relative_deviation": cmp.max_relative_deviation,
                         "at_ell": cmp.at_ell, "window": list(c.compare_window)})
        for kT, s in quantum["C"].items():
            ens = ThermalEnsemble.from_kT(kT, c.units)
            try:
                f = fit_growth(s, c.growth_window, vtilde=ens.vtilde)
            except Exception as exc:  # reported, not fatal
                report["growth"].append({"kT": kT, "error": str(exc)})
                continue
            report["growth"].append({"kT": kT, "rate_per_length": f.rate_per_length,
                                     "predicted_rate_per_length": np.sqrt(3) * c.lambda_g,
                                     "rate": f.rate, "predicted_rate": growth_rate_predicted(ens, c.lambda_g),
                                     "alpha": f.alpha, "residual": f.residual})
        for q in ("O1", "O2", "O3"):
            if len(quantum[q]) >= 4:
                report["xi"][q] = fit_xi(quantum[q], 1.0).__dict__
        if len(quantum["C"]) >= 2:
            try:
                sat = saturation_model(quantum["C"], c.m, c.a, c.saturation_tail)
                report["saturation"] = {"kappa": sat.kappa, "r2": sat.r2, "kT": sat.kT,
                                        "plateaus": sat.plateaus, "drifts": sat.drifts}
            except Exception as exc:
                report["saturation"] = {"error": str(exc)}
        self._write_json("compare.json", report)
        self._provenance("compare")
        print(f"comparison written to {self.out / 'compare.json'}")

    def figure_data(self):
        from .figures import write_figures

        paths = write_figures(self.cfg, self.out, self._load_family, self._meta())
        self._provenance("figure-data", files=[str(p) for p in paths])
        print(f"{len(paths)} figure files in {self.out / 'figures'}")


if __name__ == "__main__":
    sys.exit(main())
