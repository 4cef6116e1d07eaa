"""Analytic communication accounting for private embedding lookups.

Counts are exact bit totals of the polynomials crossing the wire, one
polynomial of ``N * q`` bits per ciphertext unless ``ct_polys`` says
otherwise. The ladder walks from a Cheetah-style baseline to the full
method one optimization at a time.

Units: ``MB`` in reports means 2^20 bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

from .protocol import FRAME_LEN, Kind, Transcript, required_plaintext_bits
from .ring import RingParams

MB = 1 << 20

FOOTNOTES = (
    "Counts treat the asymptotic traffic expressions as exact polynomial counts; constant factors "
    "(key material, metadata, the second ciphertext polynomial) are not included.",
    "PackLWEs is modeled, not implemented; its key-switching key transfer is excluded, as only "
    "per-query traffic is reported.",
    "Rows with partition 'search' use the input chunk width that minimizes total traffic.",
)


def input_comm_bits(m: int, N: int, q_bits: int, chunk_cols: int | None = None) -> int:
    """Query traffic: one N-coefficient polynomial per input chunk."""
    k_c = N if chunk_cols is None else chunk_cols
    return math.ceil(m / k_c) * N * q_bits


def output_comm_bits(
    n_eff: int, m: int, N: int, q_bits: int, packlwes: bool, chunk_cols: int | None = None
) -> int:
    """Response traffic: output polynomials plus one q-bit word per extracted value.

    With PackLWEs the extracted values are repacked into ceil(n_eff / N)
    polynomials and the per-value term disappears.
    """
    if packlwes:
        return math.ceil(n_eff / N) * N * q_bits
    rows = math.ceil(N / m) if chunk_cols is None else N // chunk_cols
    return math.ceil(n_eff / rows) * N * q_bits + n_eff * q_bits


@dataclass(frozen=True)
class MethodConfig:
    name: str
    m: int
    n: int
    degree_n: int = 4096
    q_bits: int = 48
    p_bits: int = 13
    one_hot: bool = True
    slots_per_coeff: int = 3
    packlwes: bool = False
    partition: str = "search"  # "search" or "full" (chunk width min(m, N))

    def __post_init__(self) -> None:
        if self.slots_per_coeff < 1:
            raise ValueError("slots_per_coeff must be positive")
        if self.partition not in ("search", "full"):
            raise ValueError(f"unknown partition {self.partition!r}")
        if min(self.m, self.n, self.degree_n, self.q_bits, self.p_bits) < 1:
            raise ValueError("dimensions and bit widths must be positive")

    @property
    def n_eff(self) -> int:
        return math.ceil(self.n / self.slots_per_coeff)


def load_presets() -> dict:
    text = resources.files("fastquery").joinpath("presets.json").read_text()
    return json.loads(text)


def preset_configs(m: int = 32000, n: int = 4096) -> list[MethodConfig]:
    data = load_presets()
    naive = data["naive_sizing"]
    out = []
    for p in data["presets"]:
        p_bits = p["p_bits"]
        if p_bits == "naive":
            p_bits = required_plaintext_bits(False, naive["b_w"], naive["b_x"], m)
        out.append(
            MethodConfig(
                p["name"],
                m,
                n,
                p["degree_n"],
                p["q_bits"],
                p_bits,
                p["one_hot"],
                p["slots_per_coeff"],
                p["packlwes"],
            )
        )
    return out


def implemented_config(m: int, n: int, params: RingParams = RingParams(), slots_per_coeff: int = 3) -> MethodConfig:
    """The configuration the protocol module actually runs."""
    return MethodConfig(
        "fastquery_online", m, n, params.degree_n, params.q_bits, params.p_bits, True, slots_per_coeff, False, "full"
    )


@dataclass(frozen=True)
class MethodCost:
    name: str
    q_bits: int
    p_bits: int
    n_eff: int
    chunk_cols: int
    input_bits: int
    output_bits: int
    ratio_vs_baseline: float = 1.0

    @property
    def total_bits(self) -> int:
        return self.input_bits + self.output_bits

    @property
    def total_bytes(self) -> int:
        return math.ceil(self.total_bits / 8)

    @property
    def total_mb(self) -> float:
        return self.total_bytes / MB


def _cost_at(cfg: MethodConfig, k_c: int, ct_polys: int) -> tuple[int, int]:
    N, q = cfg.degree_n, cfg.q_bits
    inp = input_comm_bits(cfg.m, N, q, k_c)
    out = output_comm_bits(cfg.n_eff, cfg.m, N, q, cfg.packlwes, k_c)
    return ct_polys * inp, ct_polys * out


def method_cost(cfg: MethodConfig, ct_polys: int = 1) -> MethodCost:
    limit = min(cfg.m, cfg.degree_n)
    if cfg.partition == "full" or cfg.packlwes:
        candidates = [limit]
    else:
        candidates = range(1, limit + 1)
    best = min(candidates, key=lambda k: (sum(_cost_at(cfg, k, ct_polys)), -k))
    inp, out = _cost_at(cfg, best, ct_polys)
    return MethodCost(cfg.name, cfg.q_bits, cfg.p_bits, cfg.n_eff, best, inp, out)


@dataclass
class CostReport:
    m: int
    n: int
    methods: list[MethodCost]
    footnotes: tuple[str, ...] = field(default=FOOTNOTES)

    @property
    def baseline(self) -> MethodCost:
        return self.methods[0]

    @property
    def final_ratio(self) -> float:
        return self.methods[-1].ratio_vs_baseline

    def to_dict(self) -> dict:
        rows = []
        for c in self.methods:
            d = asdict(c)
            d.update(total_bits=c.total_bits, total_bytes=c.total_bytes, total_mb=round(c.total_mb, 6))
            d["ratio_vs_baseline"] = round(c.ratio_vs_baseline, 6)
            rows.append(d)
        return {
            "m": self.m,
            "n": self.n,
            "unit_mb_bytes": MB,
            "methods": rows,
            "final_ratio": round(self.final_ratio, 6),
            "footnotes": list(self.footnotes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    CSV_COLUMNS = (
        "method",
        "q_bits",
        "p_bits",
        "n_eff",
        "chunk_cols",
        "input_bits",
        "output_bits",
        "total_bytes",
        "total_mb",
        "ratio",
    )

    def to_csv(self) -> str:
        """Comma-separated with columns padded to a common width."""
        table = [list(self.CSV_COLUMNS)]
        for c in self.methods:
            table.append(
                [
                    c.name,
                    str(c.q_bits),
                    str(c.p_bits),
                    str(c.n_eff),
                    str(c.chunk_cols),
                    str(c.input_bits),
                    str(c.output_bits),
                    str(c.total_bytes),
                    f"{c.total_mb:.3f}",
                    f"{c.ratio_vs_baseline:.2f}",
                ]
            )
        widths = [max(len(row[i]) for row in table) for i in range(len(self.CSV_COLUMNS))]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in table:
            writer.writerow([cell.ljust(w) for cell, w in zip(row, widths)])
        return buf.getvalue()


def method_report(m: int = 32000, n: int = 4096, configs: list[MethodConfig] | None = None) -> CostReport:
    """Evaluate the ablation ladder; the first config is the baseline."""
    configs = preset_configs(m, n) if configs is None else configs
    costs = [method_cost(c) for c in configs]
    base = costs[0].total_bits
    costs = [replace(c, ratio_vs_baseline=base / c.total_bits) for c in costs]
    return CostReport(m, n, costs)


# -- model vs measurement -------------------------------------------------------------


@dataclass
class ValidationResult:
    passed: bool
    modeled_bits: int
    measured_bits: int
    rel_error: float | None
    tolerance: float
    discrepancies: list[str]

    def to_dict(self) -> dict:
        return asdict(self)


_CT_KINDS = (Kind.QUERY_CIPHERTEXTS.name, Kind.RESPONSE_CIPHERTEXTS.name)


def validate_transcript(config: MethodConfig, transcript: Transcript, tolerance: float = 0.15) -> ValidationResult:
    """Compare modeled ciphertext bits with the ciphertext payloads in a transcript.

    Ciphertexts carry both polynomials, so the model is evaluated with two
    polynomials per ciphertext. Frame headers and alignment traffic are
    excluded. Parameter mismatches found in ciphertext headers are named.
    """
    modeled = sum(_cost_at(config, method_cost(config).chunk_cols, 2))
    cts = [e for e in transcript.entries if e.kind in _CT_KINDS]
    measured = sum((e.byte_len - FRAME_LEN) * 8 for e in cts)
    problems: list[str] = []
    if not cts:
        problems.append("transcript contains no ciphertext messages; nothing was measured")
    checks = (("degree_n", 0, config.degree_n), ("q_bits", 1, config.q_bits), ("p_bits", 2, config.p_bits))
    for label, idx, expected in checks:
        seen = sorted({e.ct_header[idx] for e in cts if e.ct_header})
        wrong = [s for s in seen if s != expected]
        if wrong:
            problems.append(f"{label} mismatch: model uses {expected}, transcript ciphertexts use {wrong}")
    rel = None
    if measured:
        rel = abs(measured - modeled) / measured
        if rel > tolerance:
            problems.append(f"modeled {modeled} bits vs measured {measured} bits: {rel:.1%} exceeds {tolerance:.0%}")
    return ValidationResult(not problems, modeled, measured, rel, tolerance, problems)
