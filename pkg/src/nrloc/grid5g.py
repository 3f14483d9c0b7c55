"""NR frame-structure arithmetic and PRS / SRS / SSB resource mapping."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT, SUBCARRIERS_PER_RB, SYMBOLS_PER_SLOT
from .errors import ConfigError, GridCollisionError, UnsupportedCombinationError


@dataclass(frozen=True)
class Numerology:
    mu: int
    scs_khz: float
    fr: str
    max_bw_mhz: float
    n_slot: int
    t_symb_us: float  # printed value
    t_cp_us: float  # printed value
    ranging_m: float | None  # printed c/BW column, None where the table has "-"
    supports_data: bool
    supports_sync: bool

    @property
    def scs_hz(self) -> float:
        return self.scs_khz * 1e3

    @property
    def symbol_duration(self) -> float:
        """Exact useful symbol duration 1/scs in seconds."""
        return 1.0 / self.scs_hz

    @property
    def ranging_accuracy(self) -> float:
        """c / BW for the maximum bandwidth, meters."""
        return SPEED_OF_LIGHT / (self.max_bw_mhz * 1e6)


_NUMEROLOGY_ROWS = [
    # mu, scs, FR, BW, Nslot, Tsymb, Tcp, ranging, data, sync
    (0, 15, "1", 50, 1, 66.7, 4.69, 6.00, True, True),
    (1, 30, "1", 100, 2, 33.3, 2.34, 3.00, True, True),
    (2, 60, "1/2", 200, 4, 16.7, 1.17, 1.50, True, False),
    (3, 120, "2", 400, 8, 8.33, 0.57, 0.75, True, True),
    (4, 240, "2", 400, 16, 4.17, 0.29, None, False, True),
    (5, 480, "2", 1600, 32, 2.08, 0.15, 0.19, True, True),
    (6, 960, "2", 2000, 64, 1.04, 0.07, 0.15, True, True),
]
NUMEROLOGY_TABLE = {row[0]: Numerology(*row) for row in _NUMEROLOGY_ROWS}


def numerology_params(mu: int) -> Numerology:
    """Row of the supported-numerology table for ``mu`` in 0..6."""
    try:
        return NUMEROLOGY_TABLE[int(mu)]
    except (KeyError, ValueError, TypeError):
        raise ConfigError(f"numerology mu must be in 0..6, got {mu!r}") from None


def bandwidth(n_rb: int, mu: int) -> float:
    """Occupied bandwidth N_RB * scs * 12 in Hz; rejects values above the numerology maximum."""
    if n_rb < 1:
        raise ConfigError(f"N_RB must be >= 1, got {n_rb}")
    num = numerology_params(mu)
    bw = n_rb * num.scs_hz * SUBCARRIERS_PER_RB
    if bw > num.max_bw_mhz * 1e6 * (1 + 1e-12):
        raise ConfigError(
            f"{n_rb} RBs at mu={mu} give {bw / 1e6:.2f} MHz > {num.max_bw_mhz} MHz maximum"
        )
    return bw


R_MAX = 948 / 1024
SCALING_FACTORS = (1.0, 0.8, 0.75, 0.4)
# FR1 DL, FR2 DL, FR1 UL, FR2 UL; 0.0 is accepted for overhead-free evaluations
OVERHEADS = (0.14, 0.18, 0.08, 0.10, 0.0)


@dataclass(frozen=True)
class CarrierParams:
    layers: int
    modulation_order: int
    scaling: float
    n_rb: int
    mu: int
    overhead: float


def data_rate(carriers: Iterable[CarrierParams]) -> float:
    """Peak data rate in Mbps summed over component carriers."""
    total = 0.0
    for c in carriers:
        if not any(abs(c.scaling - f) < 1e-12 for f in SCALING_FACTORS):
            raise ConfigError(f"scaling factor must be one of {SCALING_FACTORS}, got {c.scaling}")
        if not any(abs(c.overhead - oh) < 1e-12 for oh in OVERHEADS):
            raise ConfigError(f"overhead must be one of {OVERHEADS}, got {c.overhead}")
        if c.layers < 1 or c.modulation_order < 1 or c.n_rb < 1:
            raise ConfigError(f"invalid carrier parameters {c}")
        t_symb = numerology_params(c.mu).symbol_duration
        total += (
            c.layers
            * c.modulation_order
            * c.scaling
            * R_MAX
            * (SUBCARRIERS_PER_RB * c.n_rb / t_symb)
            * (1.0 - c.overhead)
        )
    return 1e-6 * total


def sampling_resolution(mu: int, n_fft: int) -> tuple[float, float]:
    """Minimum sampling time T_s = 1/(scs * N_f) and its range granularity T_s * c."""
    if n_fft < 64 or n_fft & (n_fft - 1):
        raise ConfigError(f"FFT size must be a power of two >= 64, got {n_fft}")
    ts = 1.0 / (numerology_params(mu).scs_hz * n_fft)
    return ts, ts * SPEED_OF_LIGHT


PRS_OFFSETS = {
    (2, 2): (0, 1),
    (2, 4): (0, 1, 0, 1),
    (2, 6): (0, 1, 0, 1, 0, 1),
    (2, 12): (0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1),
    (4, 4): (0, 2, 1, 3),
    (4, 12): (0, 2, 1, 3, 0, 2, 1, 3, 0, 2, 1, 3),
    (6, 6): (0, 3, 1, 4, 2, 5),
    (6, 12): (0, 3, 1, 4, 2, 5, 0, 3, 1, 4, 2, 5),
    (12, 12): (0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11),
}

SRS_OFFSETS = {
    (2, 1): (0,),
    (2, 2): (0, 1),
    (2, 4): (0, 1, 0, 1),
    (4, 2): (0, 2),
    (4, 4): (0, 2, 1, 3),
    (4, 8): (0, 2, 1, 3, 0, 2, 1, 3),
    (4, 12): (0, 2, 1, 3, 0, 2, 1, 3, 0, 2, 1, 3),
    (8, 4): (0, 4, 2, 6),
    (8, 8): (0, 4, 2, 6, 1, 5, 3, 7),
    (8, 12): (0, 4, 2, 6, 1, 5, 3, 7, 0, 4, 2, 6),
}


def prs_re_offsets(comb_size: int, n_symbols: int) -> tuple[int, ...]:
    try:
        return PRS_OFFSETS[(int(comb_size), int(n_symbols))]
    except KeyError:
        raise UnsupportedCombinationError(
            f"PRS comb {comb_size} with {n_symbols} symbols is not supported"
        ) from None


def srs_re_offsets(comb_size: int, n_symbols: int) -> tuple[int, ...]:
    try:
        return SRS_OFFSETS[(int(comb_size), int(n_symbols))]
    except KeyError:
        raise UnsupportedCombinationError(
            f"SRS comb {comb_size} with {n_symbols} symbols is not supported"
        ) from None


# SSB burst patterns: base symbols, stride, SCS (kHz), n-sets per band
# Bands: "le3" (f <= 3 GHz), "3to6" (3 < f <= 6 GHz), "gt6" (f > 6 GHz)
SSB_PATTERNS = {
    "A": ((2, 8), 14, 15, {"le3": (0, 1), "3to6": (0, 1, 2, 3)}),
    "B": ((4, 8, 16, 20), 28, 30, {"le3": (0,), "3to6": (0, 1)}),
    "C": ((2, 8), 14, 30, {"le3": (0, 1), "3to6": (0, 1, 2, 3)}),
    "D": (
        (4, 8, 16, 20),
        28,
        120,
        {"gt6": tuple(n for n in range(19) if n not in (4, 9, 14))},
    ),
    "E": (
        (8, 12, 16, 20, 32, 36, 40, 44),
        56,
        240,
        {"gt6": tuple(n for n in range(9) if n != 4)},
    ),
}
SSB_SYMBOLS = 4
SSB_SUBCARRIERS = 240


def _ssb_band(fc_ghz: float) -> str:
    if fc_ghz <= 3.0:
        return "le3"
    if fc_ghz <= 6.0:
        return "3to6"
    return "gt6"


def ssb_start_symbols(case: str, fc_ghz: float) -> list[int]:
    """Starting OFDM symbol of every SSB in a half-frame burst.

    Symbol indices count from the first symbol of the half frame at the SSB
    subcarrier spacing.  For cases D and E the listed n values skip every
    fifth index, which yields the 64 blocks of the burst.
    """
    case = str(case).upper()
    if case not in SSB_PATTERNS:
        raise ConfigError(f"unknown SSB case {case!r}")
    base, stride, _, bands = SSB_PATTERNS[case]
    band = _ssb_band(float(fc_ghz))
    if band not in bands:
        raise UnsupportedCombinationError(f"SSB case {case} is NA for f_c = {fc_ghz} GHz")
    return sorted(b + stride * n for n in bands[band] for b in base)


def ssb_count(fc_ghz: float) -> int:
    return {"le3": 4, "3to6": 8, "gt6": 64}[_ssb_band(float(fc_ghz))]


def prs_periodicities(mu: int) -> tuple[int, ...]:
    base = (4, 5, 8, 10, 16, 20, 32, 40, 64, 80, 160, 320, 640, 1280, 2560, 5120, 10240)
    return tuple(2**mu * p for p in base)


SRS_PERIODICITIES_REL15 = (1, 2, 4, 5, 8, 10, 16, 20, 32, 40, 64, 80, 160, 320, 640, 1280, 2560)
SRS_PERIODICITIES_REL16 = (5120, 10240, 20480, 40960, 81920)
# extended periodicities restricted to some subcarrier spacings (kHz)
SRS_EXTENDED_SCS = {20480: (30, 60, 120), 40960: (60, 120), 81920: (120,)}


@dataclass(frozen=True)
class PrsConfig:
    """One DL-PRS resource of one cell."""

    cell_id: int
    comb_size: int = 12
    n_symbols: int = 12
    re_offset: int = 0
    rb_offset: int = 0
    start_symbol: int = 0
    slot_offset: int = 0
    periodicity: int = 10240
    repetition: int = 1
    n_rb: int = 272
    mu: int = 1
    resource_id: int = 0

    def validate(self) -> "PrsConfig":
        prs_re_offsets(self.comb_size, self.n_symbols)
        if not 0 <= self.re_offset < self.comb_size:
            raise ConfigError(f"PRS RE offset {self.re_offset} outside [0, {self.comb_size})")
        if self.start_symbol < 0 or self.start_symbol + self.n_symbols > SYMBOLS_PER_SLOT:
            raise ConfigError("PRS symbols exceed the slot")
        if self.periodicity not in prs_periodicities(self.mu):
            raise ConfigError(f"PRS periodicity {self.periodicity} invalid for mu={self.mu}")
        if not 0 <= self.slot_offset < self.periodicity:
            raise ConfigError(f"PRS slot offset {self.slot_offset} outside [0, T_per)")
        if not 1 <= self.repetition <= self.periodicity:
            raise ConfigError(f"PRS repetition {self.repetition} invalid")
        if self.n_rb < 1 or self.rb_offset < 0:
            raise ConfigError("PRS bandwidth must cover >= 1 RB at a nonnegative offset")
        return self

    def active(self, slot: int) -> bool:
        return (slot - self.slot_offset) % self.periodicity < self.repetition

    def resource_elements(self, slot: int):
        """Yield (symbol, subcarrier) pairs occupied in ``slot``."""
        if not self.active(slot):
            return
        offsets = prs_re_offsets(self.comb_size, self.n_symbols)
        first = self.rb_offset * SUBCARRIERS_PER_RB
        n_sc = self.n_rb * SUBCARRIERS_PER_RB
        for i, kp in enumerate(offsets):
            k0 = (self.re_offset + kp) % self.comb_size
            for k in range(k0, n_sc, self.comb_size):
                yield self.start_symbol + i, first + k


@dataclass(frozen=True)
class SrsConfig:
    """One Rel-16 positioning SRS resource of one UE (identified by ``cell_id``)."""

    cell_id: int
    comb_size: int = 8
    n_symbols: int = 8
    comb_offset: int = 0
    freq_start: int = 0
    start_symbol: int = 0
    n_rrc: int = 0
    b_srs: int = 0
    c_srs: int = 63
    b_hop: int = 0
    resource_type: str = "periodic"
    periodicity: int = 10240
    repetition: int = 2
    slot_offset: int = 0
    n_rb: int = 272
    mu: int = 1
    resource_id: int = 0

    def validate(self) -> "SrsConfig":
        srs_re_offsets(self.comb_size, self.n_symbols)
        if not 0 <= self.comb_offset < self.comb_size:
            raise ConfigError(f"SRS comb offset {self.comb_offset} outside [0, {self.comb_size})")
        if self.start_symbol < 0 or self.start_symbol + self.n_symbols > SYMBOLS_PER_SLOT:
            raise ConfigError("SRS symbols exceed the slot")
        if not 0 <= self.n_rrc <= 67:
            raise ConfigError(f"n_RRC must be in 0..67, got {self.n_rrc}")
        if self.b_srs not in (0, 1, 2, 3) or self.b_hop not in (0, 1, 2, 3):
            raise ConfigError("B_SRS and b_hop must be in 0..3")
        if not 0 <= self.c_srs <= 63:
            raise ConfigError(f"C_SRS must be in 0..63, got {self.c_srs}")
        if self.b_hop < self.b_srs:
            raise ConfigError("frequency hopping (b_hop < B_SRS) is not supported for positioning SRS")
        if self.resource_type not in ("periodic", "semi-persistent", "aperiodic"):
            raise ConfigError(f"unknown SRS resource type {self.resource_type!r}")
        if self.resource_type != "aperiodic":
            allowed = SRS_PERIODICITIES_REL15 + SRS_PERIODICITIES_REL16
            if self.periodicity not in allowed:
                raise ConfigError(f"SRS periodicity {self.periodicity} not supported")
            scs = numerology_params(self.mu).scs_khz
            if self.periodicity in SRS_EXTENDED_SCS and scs not in SRS_EXTENDED_SCS[self.periodicity]:
                raise ConfigError(
                    f"SRS periodicity {self.periodicity} not applicable at {scs:g} kHz"
                )
            if not 0 <= self.slot_offset < self.periodicity:
                raise ConfigError("SRS slot offset outside [0, T_per)")
            if not 1 <= self.repetition <= self.periodicity:
                raise ConfigError("SRS repetition invalid")
        if self.n_rb < 1:
            raise ConfigError("SRS needs at least one RB")
        return self

    def active(self, slot: int) -> bool:
        if self.resource_type == "aperiodic":
            return slot == self.slot_offset
        return (slot - self.slot_offset) % self.periodicity < self.repetition

    def resource_elements(self, slot: int, n_subcarriers: int | None = None):
        if not self.active(slot):
            return
        offsets = srs_re_offsets(self.comb_size, self.n_symbols)
        first = self.freq_start + 4 * SUBCARRIERS_PER_RB * self.n_rrc
        n_sc = self.n_rb * SUBCARRIERS_PER_RB
        for i, kp in enumerate(offsets):
            k0 = (self.comb_offset + kp) % self.comb_size
            for k in range(k0, n_sc, self.comb_size):
                sc = first + k
                if n_subcarriers is not None:
                    sc %= n_subcarriers
                yield self.start_symbol + i, sc


@dataclass(frozen=True)
class SsbConfig:
    """SS/PBCH burst of one cell; every block is one beam."""

    cell_id: int
    case: str = "C"
    carrier_ghz: float = 3.5
    subcarrier_offset: int = 0
    period_slots: int | None = None

    @property
    def mu(self) -> int:
        scs = SSB_PATTERNS[self.case.upper()][2]
        return int(np.log2(scs / 15))

    @property
    def start_symbols(self) -> list[int]:
        return ssb_start_symbols(self.case, self.carrier_ghz)

    @property
    def n_ssb(self) -> int:
        return len(self.start_symbols)

    def validate(self) -> "SsbConfig":
        symbols = self.start_symbols
        if len(symbols) != ssb_count(self.carrier_ghz):
            raise ConfigError("SSB pattern length does not match the burst size")
        if self.period_slots is not None and self.period_slots * SYMBOLS_PER_SLOT <= max(symbols) + 3:
            raise ConfigError("SSB period shorter than the burst")
        return self

    def _period(self) -> int:
        # default 20 ms burst period
        return self.period_slots or 20 * 2**self.mu

    def resource_elements(self, slot: int):
        """Yield (symbol, subcarrier, ssb_index) for SSB REs in ``slot``."""
        slot_in_period = slot % self._period()
        for idx, s0 in enumerate(self.start_symbols):
            for l in range(s0, s0 + SSB_SYMBOLS):
                if l // SYMBOLS_PER_SLOT != slot_in_period:
                    continue
                for k in range(SSB_SUBCARRIERS):
                    yield l % SYMBOLS_PER_SLOT, self.subcarrier_offset + k, idx


def prs_beam_resource_set(base: PrsConfig, n_beams: int = 12) -> list[PrsConfig]:
    """PRS resources with incremental RE offsets, one per fine beam."""
    if not 1 <= n_beams <= base.comb_size:
        raise ConfigError(f"at most {base.comb_size} PRS beams fit in one slot")
    return [
        PrsConfig(**{**base.__dict__, "re_offset": b, "resource_id": b}) for b in range(n_beams)
    ]


KIND_CODES = {"PRS": 1, "SRS": 2, "SSB": 3}


class GridEntry(NamedTuple):
    kind: str
    cell_id: int
    resource_id: int
    value: complex


def qpsk_symbols(kind: str, cell_id: int, resource_id: int, slot: int, n: int) -> np.ndarray:
    """Unit-magnitude QPSK drawn from a generator seeded by the signal identity."""
    rng = np.random.default_rng([KIND_CODES[kind], int(cell_id), int(resource_id), int(slot)])
    bits = rng.integers(0, 2, size=(n, 2))
    return ((1 - 2 * bits[:, 0]) + 1j * (1 - 2 * bits[:, 1])) / np.sqrt(2)


class Collision(NamedTuple):
    slot: int
    symbol: int
    subcarrier: int
    first: tuple
    second: tuple


@dataclass(frozen=True)
class ResourceGrid:
    """Sparse, read-only map (slot, symbol, subcarrier) -> GridEntry."""

    slots: range
    n_subcarriers: int
    entries: MappingProxyType = field(repr=False)
    collisions: tuple = ()

    def __len__(self):
        return len(self.entries)

    def slot_array(self, slot: int, cell_id=None, kind=None, resource_id=None) -> np.ndarray:
        """Dense (14, n_subcarriers) complex array for one slot, optionally filtered."""
        out = np.zeros((SYMBOLS_PER_SLOT, self.n_subcarriers), dtype=complex)
        for (sl, sym, sc), e in self.entries.items():
            if sl != slot:
                continue
            if cell_id is not None and e.cell_id != cell_id:
                continue
            if kind is not None and e.kind != kind:
                continue
            if resource_id is not None and e.resource_id != resource_id:
                continue
            out[sym, sc] = e.value
        return out

    def dense(self, **filters) -> np.ndarray:
        """(n_slots * 14, n_subcarriers) complex array over the whole slot span."""
        return np.concatenate([self.slot_array(s, **filters) for s in self.slots], axis=0)

    def filtered(self, cell_id=None, kind=None, resource_id=None) -> "ResourceGrid":
        keep = {
            k: e
            for k, e in self.entries.items()
            if (cell_id is None or e.cell_id == cell_id)
            and (kind is None or e.kind == kind)
            and (resource_id is None or e.resource_id == resource_id)
        }
        return ResourceGrid(self.slots, self.n_subcarriers, MappingProxyType(keep))

    @classmethod
    def from_dense(cls, arr: np.ndarray, first_slot: int = 0, kind="PRS", cell_id=0) -> "ResourceGrid":
        arr = np.asarray(arr, dtype=complex)
        n_slots = -(-arr.shape[0] // SYMBOLS_PER_SLOT)
        entries = {}
        for l, k in zip(*np.nonzero(arr)):
            slot = first_slot + l // SYMBOLS_PER_SLOT
            entries[(int(slot), int(l % SYMBOLS_PER_SLOT), int(k))] = GridEntry(kind, cell_id, 0, complex(arr[l, k]))
        return cls(range(first_slot, first_slot + n_slots), arr.shape[1], MappingProxyType(entries))


def _slot_range(slots) -> range:
    if isinstance(slots, range):
        return slots
    if isinstance(slots, int):
        return range(slots)
    start, stop = slots
    return range(int(start), int(stop))


def _config_res(cfg, slot, n_subcarriers):
    if isinstance(cfg, PrsConfig):
        for sym, sc in cfg.resource_elements(slot):
            yield "PRS", sym, sc, cfg.resource_id
    elif isinstance(cfg, SrsConfig):
        for sym, sc in cfg.resource_elements(slot, n_subcarriers):
            yield "SRS", sym, sc, cfg.resource_id
    elif isinstance(cfg, SsbConfig):
        for sym, sc, idx in cfg.resource_elements(slot):
            yield "SSB", sym, sc, idx
    else:
        raise ConfigError(f"unsupported signal configuration {type(cfg).__name__}")


def _required_subcarriers(configs) -> int:
    need = 1
    for c in configs:
        if isinstance(c, PrsConfig):
            need = max(need, (c.rb_offset + c.n_rb) * SUBCARRIERS_PER_RB)
        elif isinstance(c, SrsConfig):
            need = max(need, c.freq_start + (4 * c.n_rrc + c.n_rb) * SUBCARRIERS_PER_RB)
        elif isinstance(c, SsbConfig):
            need = max(need, c.subcarrier_offset + SSB_SUBCARRIERS)
    return need


def find_collisions(configs: Sequence, slots, n_subcarriers: int | None = None) -> list[Collision]:
    """All resource elements claimed by two different (cell, resource) signals."""
    return _build(configs, slots, n_subcarriers)[1]


def _build(configs, slots, n_subcarriers):
    for c in configs:
        c.validate()
    slots = _slot_range(slots)
    if n_subcarriers is None:
        n_subcarriers = _required_subcarriers(configs)
    entries: dict = {}
    owner: dict = {}
    collisions = []
    for slot in slots:
        for cfg in configs:
            res = [(k, sym, sc, rid) for k, sym, sc, rid in _config_res(cfg, slot, n_subcarriers)]
            if not res:
                continue
            if any(sc >= n_subcarriers for _, _, sc, _ in res):
                raise ConfigError(f"{type(cfg).__name__} exceeds {n_subcarriers} subcarriers")
            # one pseudo-random sequence per (signal, slot, symbol)
            by_symbol: dict = {}
            for item in res:
                by_symbol.setdefault((item[0], item[3], item[1]), []).append(item)
            for (kind, rid, sym), items in by_symbol.items():
                seq = qpsk_symbols(kind, cfg.cell_id, rid, slot * SYMBOLS_PER_SLOT + sym, len(items))
                for (_, _, sc, _), val in zip(items, seq):
                    key = (slot, sym, sc)
                    ident = (kind, cfg.cell_id, rid)
                    if key in owner and owner[key] != ident:
                        collisions.append(Collision(slot, sym, sc, owner[key], ident))
                        continue
                    owner[key] = ident
                    entries[key] = GridEntry(kind, cfg.cell_id, rid, complex(val))
    grid = ResourceGrid(slots, n_subcarriers, MappingProxyType(entries), tuple(collisions))
    return grid, collisions


def map_to_grid(configs: Sequence, slots, n_subcarriers: int | None = None, allow_collisions=False) -> ResourceGrid:
    """Populate a sparse grid over ``slots`` (a range, ``(start, stop)`` or a count).

    Raises :class:`GridCollisionError` if two signals share a resource element,
    unless ``allow_collisions`` is set (the first writer then keeps the RE).
    """
    grid, collisions = _build(configs, slots, n_subcarriers)
    if collisions and not allow_collisions:
        raise GridCollisionError(collisions)
    return grid


def collisions_report(collisions: Sequence[Collision]) -> list[dict]:
    """JSON-friendly list of collisions."""
    return [
        {
            "slot": c.slot,
            "symbol": c.symbol,
            "subcarrier": c.subcarrier,
            "first": {"kind": c.first[0], "cell_id": c.first[1], "resource_id": c.first[2]},
            "second": {"kind": c.second[0], "cell_id": c.second[1], "resource_id": c.second[2]},
        }
        for c in collisions
    ]
