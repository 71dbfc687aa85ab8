"""Command-line front end.

Exit codes: 0 success, 1 failed model check, 2 usage error, 3 config error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .channel import add_noise, apply_channel, build_H, sample_channel
from .config import ConfigError, read_config
from .estimator import EstimationError, detect_support, estimate
from .frame import (FrameConfig, block_index, build_true_c, extract_observation, make_system,
                    pilot_grid, qpsk_pilots)
from .harness import BER_DEFAULTS, SimConfig

EXIT_CHECK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 1, 2, 3, 4

SNR_SWEEP = (30.0, 35.0, 40.0, 45.0, 50.0)
PRESETS = {
    "nmse-sweep": dict(snrp_db=SNR_SWEEP, pilots=(1, 10)),
    "papr-table": dict(snrp_db=(40.0, 50.0), pilots=(1, 10), snrd_db=(14.0,)),
    "ber": BER_DEFAULTS,
    "crlb": dict(snrp_db=SNR_SWEEP, pilots=(1, 10)),
    "estimate-once": dict(pilots=(10,), snrp_db=(40.0,)),
    "model-check": dict(M=32, N=16, l_max=4, k_max=1, trials=50),
}


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or key = value config file")
    common.add_argument("--seed", type=_seed, help="campaign seed (overrides config)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    common.add_argument("--trials", type=_positive, help="Monte-Carlo trials per cell")
    common.add_argument("--waveform", choices=("bi", "rect"), help="DD channel waveform")
    common.add_argument("--pilots", type=_int_list, help="pilot counts, comma-separated")
    common.add_argument("--snrp", type=_float_list, help="pilot SNRs in dB, comma-separated")
    common.add_argument("--paths", type=_int_list, help="path counts P, comma-separated")
    common.add_argument("--jobs", type=_positive, help="worker processes (default 1)")

    p = argparse.ArgumentParser(prog="otfs-mp", description="OTFS channel-estimation experiments")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "nmse-sweep": "NMSE of the estimator, baselines and bounds over SNRp",
        "papr-table": "mean time-domain PAPR per pilot configuration",
        "ber": "BER with perfect, estimated and baseline channels (LMMSE detection)",
        "crlb": "normalised Cramer-Rao bounds over SNRp",
        "estimate-once": "one seeded estimation trial with JSON dumps",
        "model-check": "channel-model and dictionary self-consistency checks",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return p


def resolve_config(args) -> SimConfig:
    raw = dict(PRESETS[args.command])
    if args.config is not None:
        raw.update(read_config(args.config))
    for flag, key in (("seed", "seed"), ("trials", "trials"), ("waveform", "waveform"),
                      ("pilots", "pilots"), ("snrp", "snrp_db"), ("paths", "paths"), ("jobs", "jobs")):
        v = getattr(args, flag)
        if v is not None:
            raw[key] = v
    return SimConfig.from_dict(raw)


def _summary(rows):
    for r in rows:
        parts = [f"{r.experiment}", r.method]
        for key in ("P", "pilots", "snrp_db", "snrd_db"):
            v = getattr(r, key)
            if v is not None:
                parts.append(f"{key}={v:g}")
        for key in ("median_nmse_H_db", "papr_db", "ber", "crlb_h_db"):
            v = getattr(r, key)
            if v is not None:
                parts.append(f"{key}={v:.4g}")
        print(" ".join(parts), flush=True)


def _emit(rows, out: Path, stem: str, experiment: str):
    path = harness.write_csv(rows, out / f"{stem}.csv")
    (out / f"{stem}.gp").write_text(harness.plot_script(experiment, path.name))


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def estimate_once(sim: SimConfig, out: Path) -> int:
    P, n_pilots, snrp = sim.paths[0], sim.pilots[0], sim.snrp_db[0]
    tr = harness.nmse_trial((sim.with_(baselines=False), 0, P, n_pilots, snrp, 0))
    ch, pilots, _ = harness._draw(sim, P, n_pilots, 0)
    cfg = sim.frame(n_pilots, pilot_power=10 ** (snrp / 10))
    dims = sim.dims
    y = add_noise(apply_channel(ch, pilot_grid(cfg, pilots, dims), sim.waveform), 1.0,
                  harness.noise_seed(sim.seed, 0, 0))
    res = estimate(make_system(y, cfg, pilots, dims, sim.waveform), sim.hyper, sim.waveform)
    detect_support(res, cfg, sim.rho)
    _write_json(out / "channel.json", ch.to_json())
    _write_json(out / "estimate.json", res.to_json(cfg))
    row = harness.MetricRow(experiment="estimate", method="proposed", waveform=sim.waveform, P=P,
                            pilots=n_pilots, snrp_db=snrp, trials=1,
                            nmse_h_db=harness.to_db(tr["h"]), nmse_kappa_db=harness.to_db(tr["kappa"]),
                            nmse_H_db=harness.to_db(tr["H"]), median_nmse_H_db=harness.to_db(tr["H"]),
                            crlb_h_db=harness.to_db(tr["crlb_h"]),
                            crlb_kappa_db=harness.to_db(tr["crlb_kappa"]),
                            config_hash=sim.config_hash())
    harness.write_csv([row], out / "estimate.csv")
    _summary([row])
    return 0


def model_check(sim: SimConfig, out: Path) -> int:
    """Matrix vs direct-sum outputs and ``X c = y`` on random instances."""
    dims = sim.dims
    rng = np.random.default_rng(sim.seed)
    lines = ["check,waveform,trials,max_rel_err,tol,passed"]
    ok = True
    tol = 1e-10
    for wf in ("bi", "rect"):
        worst_model = worst_dict = 0.0
        for i in range(sim.trials):
            ss = harness.trial_seed(sim.seed, i)
            P = int(rng.integers(1, max(sim.paths) + 1))
            n_hat = int(rng.integers(0, 3))
            ch = sample_channel(ss, P, sim.l_max, sim.k_max, dims, n_hat)
            x = rng.standard_normal((dims.N, dims.M)) + 1j * rng.standard_normal((dims.N, dims.M))
            direct = apply_channel(ch, x, wf)
            mat = (build_H(ch, wf) @ x.ravel()).reshape(dims.N, dims.M)
            worst_model = max(worst_model, float(np.linalg.norm(mat - direct) / np.linalg.norm(direct)))

            n_pilots = int(rng.integers(1, 4))
            cfg = FrameConfig(M_p=n_pilots, l_max=sim.l_max, k_max=sim.k_max, n_hat=n_hat)
            pilots = qpsk_pilots(cfg, ss)
            yw = extract_observation(apply_channel(ch, pilot_grid(cfg, pilots, dims), wf), cfg, dims)
            sys_ = make_system(np.zeros((dims.N, dims.M)), cfg, pilots, dims, wf)
            kap = np.zeros(cfg.J)
            for p in ch.paths:
                kap[int(block_index(p.delay, p.doppler, cfg))] = p.kappa
            pred = sys_.matrix(kap) @ build_true_c(ch, cfg)
            worst_dict = max(worst_dict, float(np.linalg.norm(pred - yw) / np.linalg.norm(yw)))
        for name, err in (("model_equivalence", worst_model), ("dictionary_consistency", worst_dict)):
            passed = bool(err < tol)
            ok &= passed
            lines.append(f"{name},{wf},{sim.trials},{err!r},{tol!r},{passed}")
            print(f"{name} {wf}: max relative error {err:.3g} {'ok' if passed else 'FAILED'}")
    (out / "model_check.csv").write_text("\n".join(lines) + "\n")
    return 0 if ok else EXIT_CHECK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    try:
        sim = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"{args.command}.config.json", sim.to_json())
    try:
        if args.command == "nmse-sweep":
            _emit(harness.run_nmse_sweep(sim, _summary), out, "nmse", "nmse")
        elif args.command == "papr-table":
            _emit(harness.run_papr_table(sim, _summary), out, "papr", "papr")
        elif args.command == "ber":
            _emit(harness.run_ber(sim, _summary), out, "ber", "ber")
        elif args.command == "crlb":
            _emit(harness.run_crlb(sim, _summary), out, "crlb", "crlb")
        elif args.command == "estimate-once":
            return estimate_once(sim, out)
        elif args.command == "model-check":
            return model_check(sim, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # invalid frame/channel geometry coming from the config
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
