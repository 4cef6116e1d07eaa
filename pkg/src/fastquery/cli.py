"""Command-line entry point: gen, quantize, finetune, query, cost.

Every command writes ``resolved_config.json`` (all effective parameters;
feed it back with ``--config`` to repeat the run) and ``run_info.json``
(timestamp and version, the only non-deterministic output).

Exit codes: 0 success, 2 validation failure, 3 configuration error,
4 unsupported scale.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import costmodel, matrix_io, protocol, rlwe
from .finetune import FinetuneConfig, finetune
from .quantizer import Criterion, QuantConfig, QuantizedTable, dequantize, quantize_table, reconstruction_error
from .ring import RingParams
from .synthetic import channel_sensitivities, lognormal_channel_table, qkv_matrix, random_quantized_table, zipf_freqs

log = logging.getLogger("fastquery")

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_UNSUPPORTED = 0, 2, 3, 4
COMBOS = ((4, 3, 3), (5, 3, 2), (6, 2, 2))


class ConfigError(ValueError):
    pass


def _combo(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(b) for b in text)
    try:
        return tuple(int(b) for b in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bit combination must look like 4,3,3, got {text!r}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- commands ------------------------------------------------------------------


def cmd_gen(args, out: Path) -> int:
    if args.m < 1 or args.n < 1:
        raise ConfigError(f"invalid dims m={args.m}, n={args.n}")
    files = {}
    if args.model == "gaussian_lognormal_channels":
        W = lognormal_channel_table(args.m, args.n, args.seed, args.sigma)
        matrix_io.save_matrix(out / "table.fqmx", W)
        files["table"] = "table.fqmx"
        if args.qkv_cols:
            matrix_io.save_matrix(out / "qkv.fqmx", qkv_matrix(args.n, args.qkv_cols, args.seed + 1))
            files["qkv"] = "qkv.fqmx"
    freqs = zipf_freqs(args.m, args.zipf_exponent, args.seed + 2)
    matrix_io.write_freqs(out / "freqs.txt", freqs)
    files["freqs"] = "freqs.txt"
    _write_json(out / "gen.json", {"files": files, "m": args.m, "n": args.n})
    return EXIT_OK


def _load_aux(args, W_cm: np.ndarray) -> dict:
    if args.stats:
        raw = json.loads(Path(args.stats).read_text())
        return {k: np.asarray(v, dtype=np.float64) for k, v in raw.items()}
    return channel_sensitivities(W_cm, args.seed)


def _token_weights(args, m: int):
    return None if not args.freqs else matrix_io.read_freqs(args.freqs, m).astype(np.float64)


def _compare_table(W_cm, aux, weights, seed: int) -> list[dict]:
    rows = []
    for crit in Criterion:
        row = {"criterion": crit.value}
        for combo in COMBOS:
            qt = quantize_table(W_cm, QuantConfig(bit_combo=combo, criterion=crit, seed=seed), aux)
            row[",".join(map(str, combo))] = reconstruction_error(W_cm, qt, weights)
        rows.append(row)
    return rows


def cmd_quantize(args, out: Path) -> int:
    W_cm = matrix_io.load_matrix(args.table).astype(np.float64).T
    aux = _load_aux(args, W_cm)
    weights = _token_weights(args, W_cm.shape[1])
    cfg = QuantConfig(args.granularity, args.combo, args.criterion, not args.no_pow2, args.seed)
    qt = quantize_table(W_cm, cfg, aux)
    matrix_io.save_quantized(out / "quantized.fqmx", qt)
    deq = dequantize(qt, unpermute=True)
    metrics = {
        "channel_bits": qt.channel_bits.tolist(),
        "scales": qt.scales.tolist(),
        "reconstruction_error": reconstruction_error(W_cm, qt, weights),
        "max_abs_error": float(np.abs(W_cm - deq).max()) if W_cm.size else 0.0,
    }
    if args.compare:
        rows = _compare_table(W_cm, aux, weights, args.seed)
        metrics["comparison"] = rows
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        (out / "comparison.csv").write_text(buf.getvalue())
    _write_json(out / "quantize_metrics.json", metrics)
    return EXIT_OK


def cmd_finetune(args, out: Path) -> int:
    W = matrix_io.load_matrix(args.table).astype(np.float64)
    m, n = W.shape
    if args.qkv:
        W_qkv = matrix_io.load_matrix(args.qkv).astype(np.float64)
    else:
        W_qkv = qkv_matrix(n, args.qkv_cols, args.seed + 1)
    freqs = matrix_io.read_freqs(args.freqs, m) if args.freqs else zipf_freqs(m, 1.0, args.seed + 2)
    qcfg = QuantConfig(bit_combo=args.combo, criterion=args.criterion, seed=args.seed)
    cfg = FinetuneConfig(args.lr, args.iterations, args.tau, args.seed, qcfg)
    result = finetune(W, W_qkv, freqs, cfg)
    matrix_io.save_quantized(out / "finetuned.fqmx", result.table)
    hist = np.array(result.loss_history)
    metrics = {
        "loss_history": hist.tolist(),
        "best_loss_curve": np.minimum.accumulate(hist).tolist(),
        "best_iteration": result.best_iteration,
        "initial_loss": float(hist[0]),
        "best_loss": result.best_loss,
        "channel_bits": result.table.channel_bits.tolist(),
        "scales": result.table.scales.tolist(),
        "reconstruction_error": reconstruction_error(W.T, result.table),
    }
    _write_json(out / "finetune_metrics.json", metrics)
    return EXIT_OK


def cmd_query(args, out: Path) -> int:
    rng = np.random.default_rng(args.seed)
    params = RingParams(degree_n=args.degree_n, q_bits=args.q_bits)
    if args.mode == "baseline":
        table = None
        if args.table:
            table = matrix_io.load_quantized(args.table)
        else:
            vals = rng.integers(-(1 << (args.bw - 1)), 1 << (args.bw - 1), size=(args.n, args.m))
            table = QuantizedTable(vals, np.full(args.n, args.bw), np.ones(args.n))
        m, n = table.values.shape[1], table.values.shape[0]
        if m > protocol.BASELINE_MAX_M or int(table.channel_bits.max()) > protocol.BASELINE_MAX_BITS:
            raise protocol.UnsupportedScaleError(
                f"baseline flow supports m <= {protocol.BASELINE_MAX_M} and b_w <= {protocol.BASELINE_MAX_BITS}"
            )
        p_bits = max(13, protocol.required_plaintext_bits(False, int(table.channel_bits.max()), 1, m))
        params = RingParams(params.degree_n, params.q_bits, p_bits)

        def runner(tok, s):
            return protocol.run_baseline_offline(table, tok, params, s)

        slots = 1
    else:
        if args.table:
            table = matrix_io.load_quantized(args.table)
        else:
            table = random_quantized_table(args.n, args.m, args.combo, args.seed)
        m, n = table.values.shape[1], table.values.shape[0]
        packed = protocol.prepare_table(table, params)
        align = protocol.AlignConfig(args.align_ell, args.security_bits)

        def runner(tok, s):
            return protocol.run_online_query(packed, tok, params, s, align)

        slots = packed.layout.num_slots

    tokens = rng.choice(m, size=min(args.tokens, m), replace=False) if args.tokens < m else np.arange(m)
    mismatches, transcripts = [], []
    for i, tok in enumerate(tokens.tolist()):
        res, tr = runner(tok, args.seed + 1 + i)
        expected = np.asarray(table.values[:, tok], dtype=np.int64)
        ok = np.array_equal(res.reconstruct(), expected)
        if res.aligned is not None:
            ok = ok and np.array_equal(res.aligned.reconstruct(), expected)
        if not ok:
            mismatches.append(tok)
        transcripts.append(tr)
        log.info("token %d: %s", tok, "ok" if ok else "MISMATCH")

    config = costmodel.implemented_config(m, n, params, slots)
    validation = costmodel.validate_transcript(config, transcripts[0])
    _write_json(out / "transcript.json", transcripts[0].to_dict())
    _write_json(out / "validation.json", validation.to_dict())
    summary = {
        "mode": args.mode,
        "m": m,
        "n": n,
        "tokens": tokens.tolist(),
        "matched": len(tokens) - len(mismatches),
        "mismatched_tokens": mismatches,
        "phase_totals": transcripts[0].phase_totals(),
        "total_bytes": transcripts[0].total_bytes,
        "validation_passed": validation.passed,
    }
    _write_json(out / "query_summary.json", summary)
    if mismatches or not validation.passed:
        print(f"validation failed: {len(mismatches)} mismatched tokens; {validation.discrepancies}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_cost(args, out: Path) -> int:
    report = costmodel.method_report(args.m, args.n)
    (out / "cost.json").write_text(report.to_json() + "\n")
    (out / "cost.csv").write_text(report.to_csv())
    print(report.to_csv(), end="")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file of parameters; explicit flags win")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastquery", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("gen", help="synthetic table, projection and token frequencies")
    _common(p)
    p.add_argument("--m", type=int, default=1024, help="vocabulary size")
    p.add_argument("--n", type=int, default=64, help="embedding dimension")
    p.add_argument("--model", choices=["gaussian_lognormal_channels", "zipf_freqs"], default="gaussian_lognormal_channels")
    p.add_argument("--sigma", type=float, default=0.7, help="log-normal spread of channel scales")
    p.add_argument("--qkv-cols", type=int, default=0, help="also write an n x cols projection matrix")
    p.add_argument("--zipf-exponent", type=float, default=1.0)
    p.set_defaults(func=cmd_gen)

    for name, func, helptext in (
        ("quantize", cmd_quantize, "mixed-precision per-channel quantization"),
        ("finetune", cmd_finetune, "data-free fine-tuning of the quantized table"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--table", type=Path, required=False, help="token-major float matrix container")
        p.add_argument("--freqs", type=Path, help="token_id count text file")
        p.add_argument("--combo", type=_combo, default=(4, 3, 3), help="slot bit widths, e.g. 4,3,3")
        p.add_argument("--criterion", choices=[c.value for c in Criterion], default="absolute_value")
        if name == "quantize":
            p.add_argument("--granularity", choices=["per_channel", "per_tensor"], default="per_channel")
            p.add_argument("--no-pow2", action="store_true", help="use exact rather than power-of-two scales")
            p.add_argument("--stats", type=Path, help="JSON with per-channel 'gradient'/'hessian' statistics")
            p.add_argument("--compare", action="store_true", help="also tabulate every criterion x combo")
        else:
            p.add_argument("--qkv", type=Path, help="projection matrix container (n x cols)")
            p.add_argument("--qkv-cols", type=int, default=32, help="columns of a synthetic projection if --qkv is absent")
            p.add_argument("--lr", type=float, default=1e-3)
            p.add_argument("--iterations", type=int, default=500)
            p.add_argument("--tau", type=float, default=None, help="frequency clip (default 10 x median)")
        p.set_defaults(func=func)

    p = sub.add_parser("query", help="run private lookups and check them against the table")
    _common(p)
    p.add_argument("--mode", choices=["online", "baseline"], default="online")
    p.add_argument("--m", type=int, default=8192)
    p.add_argument("--n", type=int, default=384)
    p.add_argument("--table", type=Path, help="quantized table container (otherwise random)")
    p.add_argument("--tokens", type=int, default=10, help="number of random distinct tokens to query")
    p.add_argument("--combo", type=_combo, default=(4, 3, 3))
    p.add_argument("--bw", type=int, default=4, help="weight bits for the baseline's random table")
    p.add_argument("--degree-n", type=int, default=4096)
    p.add_argument("--q-bits", type=int, default=48)
    p.add_argument("--align-ell", type=int, default=16, help="share ring bits after alignment")
    p.add_argument("--security-bits", type=int, default=128, help="lambda in the alignment cost estimate")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("cost", help="analytic communication ladder")
    _common(p)
    p.add_argument("--m", type=int, default=32000)
    p.add_argument("--n", type=int, default=4096)
    p.set_defaults(func=cmd_cost)
    return parser


def _parse(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    cfg.pop("command", None)
    cfg.pop("config", None)
    known = set(vars(args))
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for '{args.command}': {unknown}")
    # flags win: re-parse with config values as defaults
    sub = parser.subcommands[args.command]
    for key in ("out", "table", "freqs", "qkv", "stats"):
        if cfg.get(key) is not None:
            cfg[key] = Path(cfg[key])
    if "combo" in cfg:
        cfg["combo"] = _combo(cfg["combo"])
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def _resolved(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "config"):
            continue
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FASTQUERY_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        if args.command in ("quantize", "finetune") and args.table is None:
            raise ConfigError("--table is required")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "resolved_config.json", _resolved(args))
        _write_json(out / "run_info.json", {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")})
        return args.func(args, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except protocol.UnsupportedScaleError as exc:
        print(f"unsupported scale: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except (ValueError, OSError, rlwe.NoiseBudgetError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
