"""Two-party private embedding lookup over a byte-counted channel.

Online query (client holds a token id, server holds the packed table):

1. client encrypts the one-hot query, one ciphertext per input chunk;
2. server multiplies by its weight polynomials, folds the chunks, adds a
   slot-wise random mask and keeps the mask as its share;
3. client decrypts, reads the extraction coefficients and splits them into
   per-channel slot shares.

Optionally the shares are then re-shared over a common ring Z_{2^ell} by a
trusted dealer that stands in for a bit-width extension protocol.

``run_baseline_offline`` implements the older two-stage flow (encrypted
random vector offline, blinded query online) at reduced scale.
"""

from __future__ import annotations

import json
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import coeff_packing as cp
from . import rlwe
from . import slot_packing as sp
from .quantizer import QuantizedTable
from .ring import RingParams, centered

FRAME = struct.Struct("<IBI")
FRAME_LEN = FRAME.size


class CorruptFrameError(ValueError):
    pass


class UnsupportedScaleError(ValueError):
    pass


class Kind(IntEnum):
    CONFIG = 0
    QUERY_CIPHERTEXTS = 1
    RESPONSE_CIPHERTEXTS = 2
    SHARE_SYNC = 3
    ALIGN_REQUEST = 4
    ALIGN_RESPONSE = 5


@dataclass(frozen=True)
class Message:
    kind: Kind
    seq: int
    payload: bytes

    @property
    def byte_len(self) -> int:
        return FRAME_LEN + len(self.payload)

    def encode(self) -> bytes:
        return FRAME.pack(len(self.payload), int(self.kind), self.seq) + self.payload

    @classmethod
    def decode(cls, frame: bytes) -> "Message":
        if len(frame) < FRAME_LEN:
            raise CorruptFrameError("truncated frame header")
        length, kind, seq = FRAME.unpack_from(frame)
        if length != len(frame) - FRAME_LEN:
            raise CorruptFrameError(f"frame claims {length} payload bytes, carries {len(frame) - FRAME_LEN}")
        try:
            kind = Kind(kind)
        except ValueError:
            raise CorruptFrameError(f"unknown message kind {kind}") from None
        return cls(kind, seq, bytes(frame[FRAME_LEN:]))


# -- transcript ------------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptEntry:
    direction: str
    phase: str
    kind: str
    seq: int
    byte_len: int
    ct_header: tuple[int, int, int] | None = None


@dataclass
class Transcript:
    entries: list[TranscriptEntry] = field(default_factory=list)

    def record(self, msg: Message, direction: str, phase: str) -> None:
        header = None
        if msg.kind in (Kind.QUERY_CIPHERTEXTS, Kind.RESPONSE_CIPHERTEXTS):
            try:
                header = rlwe.read_ct_header(msg.payload)
            except rlwe.WireFormatError:
                header = None
        self.entries.append(TranscriptEntry(direction, phase, msg.kind.name, msg.seq, msg.byte_len, header))

    @property
    def total_bytes(self) -> int:
        return sum(e.byte_len for e in self.entries)

    def phase_totals(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.phase] = out.get(e.phase, 0) + e.byte_len
        return out

    def count(self, kind: Kind | None = None, phase: str | None = None) -> int:
        return sum(
            1 for e in self.entries if (kind is None or e.kind == kind.name) and (phase is None or e.phase == phase)
        )

    def to_dict(self) -> dict:
        return {
            "messages": [
                {
                    "direction": e.direction,
                    "phase": e.phase,
                    "kind": e.kind,
                    "seq": e.seq,
                    "byte_len": e.byte_len,
                    **({"ct_header": list(e.ct_header)} if e.ct_header else {}),
                }
                for e in self.entries
            ],
            "phase_totals": self.phase_totals(),
            "total_bytes": self.total_bytes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Transcript":
        entries = [
            TranscriptEntry(
                m["direction"],
                m["phase"],
                m["kind"],
                m["seq"],
                m["byte_len"],
                tuple(m["ct_header"]) if "ct_header" in m else None,
            )
            for m in data["messages"]
        ]
        return cls(entries)


class DuplexChannel:
    """In-process byte pipe between client and server; every frame is logged."""

    def __init__(self, transcript: Transcript | None = None) -> None:
        self.transcript = transcript if transcript is not None else Transcript()
        self._queues = {"client->server": deque(), "server->client": deque()}
        self._seq = {"client->server": 0, "server->client": 0}

    def send(self, direction: str, kind: Kind, payload: bytes, phase: str) -> Message:
        msg = Message(kind, self._seq[direction], payload)
        self._seq[direction] += 1
        self.transcript.record(msg, direction, phase)
        self._queues[direction].append(msg.encode())
        return msg

    def recv_all(self, direction: str) -> list[bytes]:
        q = self._queues[direction]
        out = list(q)
        q.clear()
        return out


# -- accumulation analysis ----------------------------------------------------------------


def required_plaintext_bits(one_hot: bool, b_w: int, b_x: int, m: int) -> int:
    """Plaintext bits needed so W x - S cannot overflow.

    A one-hot query selects a single entry, so only the weight bits plus one
    bit for the mask subtraction remain.
    """
    if one_hot:
        return b_w + 1
    return b_x + b_w + math.ceil(math.log2(m)) + 1


# -- packed table --------------------------------------------------------------------


@dataclass(frozen=True)
class PackedTable:
    packed: np.ndarray  # (n_eff, m) packed coefficients
    n: int
    plan: cp.MatVecPlan
    layout: sp.SlotLayout

    @property
    def m(self) -> int:
        return self.plan.m


def prepare_table(table: QuantizedTable, params: RingParams) -> PackedTable:
    if table.bit_combo is None:
        raise sp.LayoutError("table has no slot layout; quantize with a bit combination")
    layout = sp.make_layout(table.bit_combo, params.p_bits)
    packed = sp.pack_table(table.values, table.channel_bits, layout)
    n, m = table.values.shape
    return PackedTable(packed, n, cp.plan_matvec(m, packed.shape[0], params.degree_n), layout)


def _config_payload(params: RingParams, table: PackedTable) -> bytes:
    return json.dumps(
        {
            "degree_n": params.degree_n,
            "q_bits": params.q_bits,
            "p_bits": params.p_bits,
            "error_bound": params.error_bound,
            "m": table.m,
            "n": table.n,
            "bit_combo": list(table.layout.value_bits),
        },
        sort_keys=True,
    ).encode()


# -- client ---------------------------------------------------------------------


@dataclass(frozen=True)
class ClientState:
    token: int
    num_queries: int


def _response_bound(params: RingParams, chunks: int) -> int:
    """Public worst-case noise of a response: any weights below p."""
    return chunks * params.error_bound * params.degree_n * (params.p - 1)


def client_build_query(
    token_id: int, m: int, plan: cp.MatVecPlan, sk: rlwe.SecretKey, rng: np.random.Generator
) -> tuple[list[bytes], ClientState]:
    """Encrypt the one-hot query; returns ciphertext payloads and private state."""
    if not 0 <= token_id < m:
        raise ValueError(f"token {token_id} outside vocabulary of size {m}")
    x = np.zeros(m, dtype=np.int64)
    x[token_id] = 1
    chunks = cp.encode_input_vector(x, plan, sk.params.p)
    payloads = [rlwe.serialize_ct(rlwe.encrypt(c, sk, rng)) for c in chunks]
    return payloads, ClientState(token_id, len(payloads))


def _decode_frames(frames: list[bytes], kind: Kind) -> list[Message]:
    msgs = [Message.decode(f) for f in frames]
    for i, msg in enumerate(msgs):
        if msg.kind != kind:
            raise CorruptFrameError(f"expected {kind.name}, got {msg.kind.name}")
        if i and msg.seq != msgs[i - 1].seq + 1:
            raise CorruptFrameError("out-of-order sequence numbers")
    return msgs


def _parse_ct(payload: bytes, params: RingParams, bound: int | None = None) -> rlwe.Ciphertext:
    try:
        return rlwe.deserialize_ct(payload, params, bound)
    except (rlwe.WireFormatError, rlwe.ParamsMismatchError) as exc:
        raise CorruptFrameError(str(exc)) from exc


def client_finish(
    response_frames: list[bytes],
    state: ClientState,
    sk: rlwe.SecretKey,
    plan: cp.MatVecPlan,
    layout: sp.SlotLayout,
    n: int,
) -> np.ndarray:
    """Decrypt, read extraction coefficients, split into per-channel shares."""
    params = sk.params
    msgs = _decode_frames(response_frames, Kind.RESPONSE_CIPHERTEXTS)
    if len(msgs) != plan.num_output_polys:
        raise CorruptFrameError(f"expected {plan.num_output_polys} responses, got {len(msgs)}")
    bound = _response_bound(params, state.num_queries)
    coeffs = np.stack([rlwe.decrypt(_parse_ct(m.payload, params, bound), sk) for m in msgs])
    picked = cp.extract_output(coeffs, plan)
    return sp.extract_client_shares(picked, layout).reshape(-1)[:n]


# -- server ---------------------------------------------------------------------


_ROWS_PER_BATCH = 128


def server_eval(
    query_frames: list[bytes],
    table: PackedTable,
    params: RingParams,
    rng: np.random.Generator,
    masked: bool = True,
) -> tuple[list[bytes], np.ndarray]:
    """Homomorphic lookup plus masking; returns response payloads and the
    server's per-channel shares. ``masked=False`` is a test-harness switch."""
    plan, layout = table.plan, table.layout
    msgs = _decode_frames(query_frames, Kind.QUERY_CIPHERTEXTS)
    if len(msgs) != plan.num_input_polys:
        raise CorruptFrameError(f"expected {plan.num_input_polys} query ciphertexts, got {len(msgs)}")
    cts = [_parse_ct(m.payload, params) for m in msgs]
    prepared = rlwe.prepare_cts(cts)

    masks = sp.sample_slot_masks(layout, plan.num_output_polys * plan.rows_per_poly, rng)
    if not masked:
        masks[:] = 0
    packed_masks = sp.pack_masks(masks, layout).reshape(plan.num_output_polys, plan.rows_per_poly)
    idx = plan.extraction_indices

    payloads = []
    for g0 in range(0, plan.num_output_polys, _ROWS_PER_BATCH):
        span = range(g0, min(g0 + _ROWS_PER_BATCH, plan.num_output_polys))
        weights = cp.encode_weight_rows(table.packed, plan, span, params.p)
        for g, ct in zip(span, rlwe.ct_matvec_pt(cts, weights, prepared)):
            if masked:
                # unused coefficients get full-range noise so they leak nothing
                mask_poly = rng.integers(0, params.p, size=params.degree_n, dtype=np.uint64)
            else:
                mask_poly = np.zeros(params.degree_n, dtype=np.uint64)
            mask_poly[idx] = packed_masks[g]
            payloads.append(rlwe.serialize_ct(rlwe.ct_add_pt(ct, mask_poly)))
    return payloads, masks.reshape(-1)[: table.n]


# -- bit-width alignment ------------------------------------------------------------


@dataclass(frozen=True)
class AlignConfig:
    ell: int = 16
    security_bits: int = 128

    def charge_bytes(self, extensions: int) -> int:
        """Estimated traffic of a real extension protocol: 2*ell + lambda bits each."""
        return math.ceil(extensions * (2 * self.ell + self.security_bits) / 8)


@dataclass(frozen=True)
class AlignedShares:
    client: np.ndarray
    server: np.ndarray
    ell: int

    def reconstruct(self) -> np.ndarray:
        return centered((self.client + self.server).astype(np.uint64), self.ell)


def align_bitwidth(client_shares, server_shares, value_bits, ell: int, rng: np.random.Generator) -> AlignedShares:
    """Trusted-dealer re-sharing of slot shares into additive shares mod 2^ell."""
    c = np.asarray(client_shares, dtype=np.int64)
    r = np.asarray(server_shares, dtype=np.int64)
    b = np.asarray(value_bits, dtype=np.int64)
    if ell > 62:
        raise ValueError("ell must be at most 62")
    if b.size and ell < int(b.max()) + 1:
        raise ValueError(f"ell={ell} is smaller than the widest slot ({int(b.max()) + 1} bits)")
    v = sp.reconstruct(c, r, b)
    modulus = np.int64(1) << ell
    c_new = rng.integers(0, modulus, size=v.shape, dtype=np.int64)
    r_new = (v - c_new) % modulus
    return AlignedShares(c_new, r_new, ell)


def _align_payload(count: int, cfg: AlignConfig, filler: int) -> bytes:
    return struct.pack("<IHH", count, cfg.ell, cfg.security_bits) + bytes(filler)


# -- results and drivers ----------------------------------------------------------------


@dataclass
class QueryResult:
    token: int
    client_shares: np.ndarray
    server_shares: np.ndarray
    value_bits: np.ndarray
    scheme: str = "fastquery"
    modulus_bits: int | None = None  # baseline: shares live in Z_{2^modulus_bits}
    aligned: AlignedShares | None = None

    @property
    def share_bits(self) -> np.ndarray:
        if self.scheme == "baseline":
            return np.full_like(self.value_bits, self.modulus_bits)
        return self.value_bits + 1

    def reconstruct(self) -> np.ndarray:
        """Both shares combined; only meaningful where both are visible (tests)."""
        if self.scheme == "baseline":
            total = (self.client_shares + self.server_shares).astype(np.uint64)
            return centered(total, self.modulus_bits)
        return sp.reconstruct(self.client_shares, self.server_shares, self.value_bits)


def run_online_query(
    table: QuantizedTable | PackedTable,
    token: int,
    params: RingParams = RingParams(),
    seed: int = 0,
    align: AlignConfig | None = AlignConfig(),
) -> tuple[QueryResult, Transcript]:
    """Drive client and server through one query over an in-process channel."""
    packed = table if isinstance(table, PackedTable) else prepare_table(table, params)
    client_rng, server_rng, dealer_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    chan = DuplexChannel()
    C2S, S2C = "client->server", "server->client"

    chan.send(S2C, Kind.CONFIG, _config_payload(params, packed), "setup")
    cfg = json.loads(Message.decode(chan.recv_all(S2C)[0]).payload)
    if (cfg["degree_n"], cfg["q_bits"], cfg["p_bits"]) != (params.degree_n, params.q_bits, params.p_bits):
        raise CorruptFrameError("server announced different ring parameters")

    sk = rlwe.keygen(params, client_rng)
    payloads, state = client_build_query(token, packed.m, packed.plan, sk, client_rng)
    for p in payloads:
        chan.send(C2S, Kind.QUERY_CIPHERTEXTS, p, "query")

    responses, server_shares = server_eval(chan.recv_all(C2S), packed, params, server_rng)
    for p in responses:
        chan.send(S2C, Kind.RESPONSE_CIPHERTEXTS, p, "response")

    client_shares = client_finish(chan.recv_all(S2C), state, sk, packed.plan, packed.layout, packed.n)
    value_bits = np.resize(np.array(packed.layout.value_bits, dtype=np.int64), packed.n)
    result = QueryResult(token, client_shares, server_shares, value_bits)

    if align is not None:
        charge = align.charge_bytes(packed.n)
        chan.send(C2S, Kind.ALIGN_REQUEST, _align_payload(packed.n, align, charge // 2), "alignment")
        chan.send(S2C, Kind.ALIGN_RESPONSE, _align_payload(packed.n, align, charge - charge // 2), "alignment")
        chan.recv_all(C2S), chan.recv_all(S2C)
        result.aligned = align_bitwidth(client_shares, server_shares, value_bits, align.ell, dealer_rng)
    return result, chan.transcript


BASELINE_MAX_M = 256
BASELINE_MAX_BITS = 4


def run_baseline_offline(
    table: QuantizedTable,
    token: int,
    params: RingParams | None = None,
    seed: int = 0,
) -> tuple[QueryResult, Transcript]:
    """Offline/online lookup: Enc(R) -> Enc(WR) - S offline, X - R in the clear online.

    ``table`` is an unpacked (n x m) signed table of at most 4 bits per entry.
    """
    values = np.asarray(table.values, dtype=np.int64)
    n, m = values.shape
    b_w = int(np.max(table.channel_bits))
    if m > BASELINE_MAX_M or b_w > BASELINE_MAX_BITS:
        raise UnsupportedScaleError(
            f"baseline flow supports m <= {BASELINE_MAX_M} and b_w <= {BASELINE_MAX_BITS}, got m={m}, b_w={b_w}"
        )
    if params is None:
        p_bits = max(13, required_plaintext_bits(False, b_w, 1, m))
        params = RingParams(p_bits=p_bits)
    if not 0 <= token < m:
        raise ValueError(f"token {token} outside vocabulary of size {m}")
    p = params.p
    plan = cp.plan_matvec(m, n, params.degree_n)
    client_rng, server_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    chan = DuplexChannel()
    C2S, S2C = "client->server", "server->client"
    W_mod = values % p

    # offline: client sends Enc(R), server answers Enc(W R) - S
    sk = rlwe.keygen(params, client_rng)
    R = client_rng.integers(0, p, size=m, dtype=np.int64)
    for chunk in cp.encode_input_vector(R, plan, p):
        chan.send(C2S, Kind.QUERY_CIPHERTEXTS, rlwe.serialize_ct(rlwe.encrypt(chunk, sk, client_rng)), "offline")

    cts = [_parse_ct(m_.payload, params) for m_ in _decode_frames(chan.recv_all(C2S), Kind.QUERY_CIPHERTEXTS)]
    weights = cp.encode_weight_rows(W_mod, plan, p=p)
    S_polys = server_rng.integers(0, p, size=(plan.num_output_polys, params.degree_n), dtype=np.uint64)
    for ct, s_poly in zip(rlwe.ct_matvec_pt(cts, weights), S_polys):
        chan.send(S2C, Kind.RESPONSE_CIPHERTEXTS, rlwe.serialize_ct(rlwe.ct_sub_pt(ct, s_poly)), "offline")
    S = cp.extract_output(S_polys, plan).astype(np.int64)

    bound = _response_bound(params, len(cts))
    frames = _decode_frames(chan.recv_all(S2C), Kind.RESPONSE_CIPHERTEXTS)
    decrypted = np.stack([rlwe.decrypt(_parse_ct(f.payload, params, bound), sk) for f in frames])
    client_share = cp.extract_output(decrypted, plan).astype(np.int64)

    # online: blinded query in the clear, server finishes locally
    X = np.zeros(m, dtype=np.int64)
    X[token] = 1
    blinded = (X - R) % p
    chan.send(C2S, Kind.SHARE_SYNC, rlwe.pack_bits(blinded, params.p_bits), "online")
    (frame,) = chan.recv_all(C2S)
    received = rlwe.unpack_bits(Message.decode(frame).payload, params.p_bits, m).astype(np.int64)
    server_share = (W_mod @ received + S) % p

    result = QueryResult(
        token, client_share, server_share, np.asarray(table.channel_bits, dtype=np.int64), "baseline", params.p_bits
    )
    return result, chan.transcript
