"""Hash-based compression and interactive simulation engines.

Five engines of increasing strength:

1. ``SlepianWolfCoder``      one-shot compression of X against side information
2. ``InteractiveSWCoder``    multi-round compression with slice feedback
3. ``RoundSimulator``        one-round channel simulation with a shared seed
4. ``ImprovedRoundSimulator`` adds the transmitted slice index J
5. ``ProtocolSimulator``     round-by-round simulation of a full transcript law

Each engine precomputes its tables once and exposes ``run`` for a single
trial; ``run_trials`` drives independent seed streams.  Engines whose
randomness is small enough also expose ``exact_view_law`` which enumerates
every hash seed and shared-randomness value.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import OutOfRange, SupportViolation, TooLarge
from .hashing import (
    ENUMERATION_CAP,
    HashFamily,
    draw_hash,
    encode_universe,
    encoding_width,
    enumerate_family,
    family_size,
)
from .probcore import FiniteDistribution, JointSource, SliceConfig, SpectrumTable
from .protocol import TranscriptLaw

ERROR_CAUSES = ("tail", "no_match", "multiple_match", "bad_J",
                "budget_exceeded")


@dataclass(frozen=True)
class Message:
    round: int
    sender: str
    nbits: int
    kind: str  # "hash", "ack", "index", ...


@dataclass
class ChannelLog:
    messages: list = field(default_factory=list)

    def send(self, round_: int, sender: str, nbits: int, kind: str):
        self.messages.append(Message(round_, sender, nbits, kind))

    @property
    def total_bits(self) -> int:
        return sum(m.nbits for m in self.messages)


@dataclass(frozen=True)
class SimOutcome:
    x: object
    y: object
    tau_x: object          # transmitter-side result (None after an error)
    tau_y: object          # receiver-side result (None after an error)
    bits: int
    error: str | None      # None or one of ERROR_CAUSES
    slice_hit: int         # terminating slice (engines 1-4), rounds done (5)
    log: ChannelLog | None = None

    @property
    def view(self) -> tuple:
        return (self.tau_x, self.tau_y, self.x, self.y)


@dataclass
class TrialAggregate:
    trials: int
    views: Counter
    bits: np.ndarray
    errors: Counter
    mismatches: int        # trials where tau_x != tau_y

    @property
    def error_rate(self) -> float:
        return sum(self.errors.values()) / self.trials

    @property
    def mismatch_rate(self) -> float:
        return self.mismatches / self.trials


def run_trials(engine, trials: int, master_seed: int,
               keep_log: bool = False) -> TrialAggregate:
    """Run independent trials on per-trial child seed streams."""
    views: Counter = Counter()
    errors: Counter = Counter()
    bits = np.empty(trials, dtype=np.int64)
    mismatches = 0
    for t in range(trials):
        rng = np.random.default_rng([master_seed, t])
        out = engine.run(rng, log=keep_log)
        views[out.view] += 1
        bits[t] = out.bits
        if out.error is not None:
            errors[out.error] += 1
        if out.tau_x != out.tau_y:
            mismatches += 1
    return TrialAggregate(trials, views, bits, errors, mismatches)


def _conditional_density(cond: np.ndarray) -> np.ndarray:
    """-log2 of a conditional table, +inf where the mass is zero."""
    with np.errstate(divide="ignore"):
        return np.where(cond > 0, -np.log2(np.maximum(cond, 1e-300)), np.inf)


def _int_param(value: float, name: str) -> int:
    iv = int(round(value))
    if abs(value - iv) > 1e-9 or iv <= 0:
        raise OutOfRange(f"{name} must be a positive integer number of bits")
    return iv


# ---------------------------------------------------------------------------
# engine 1: one-shot compression
# ---------------------------------------------------------------------------


class SlepianWolfCoder:
    """Hash X down to l bits; decode inside an aux-typical set.

    The auxiliary conditional Q_{X|Y} defaults to the true one.  The decoding
    set at y is { x : -log2 Q(x|y) <= l - gamma } and the analytic error
    bound is Pr[(X, Y) atypical] + 2^{-gamma}.
    """

    def __init__(self, source: JointSource, l: int, gamma: float,
                 aux: np.ndarray | None = None):
        self.source = source
        self.l = _int_param(l, "l")
        if gamma < 0:
            raise OutOfRange("gamma must be nonnegative")
        self.gamma = float(gamma)
        cond = source.p_x_given_y if aux is None else np.asarray(aux, float)
        if cond.shape != source.mass.shape:
            raise OutOfRange("aux conditional has the wrong shape")
        self.h_q = _conditional_density(cond)
        self.typical = self.h_q <= self.l - self.gamma + 1e-12
        self.width = encoding_width(len(source.x_alphabet))
        self.enc = encode_universe(len(source.x_alphabet), self.width)
        self.cands = [np.nonzero(self.typical[:, j])[0]
                      for j in range(len(source.y_alphabet))]

    def analytic_error_bound(self) -> float:
        atyp = float(self.source.mass[~self.typical].sum())
        return atyp + 2.0 ** (-self.gamma)

    def run(self, rng, x=None, y=None, fam: HashFamily | None = None,
            log: bool = False) -> SimOutcome:
        if x is None:
            i, j = self.source.sample(rng)
        else:
            i, j = self.source.x_index[x], self.source.y_index[y]
        if fam is None:
            fam = draw_hash(self.width, self.l, rng)
        hashes = fam.apply_packed(self.enc)
        cands = self.cands[j]
        match = cands[hashes[cands] == hashes[i]]
        chan = ChannelLog() if log else None
        if chan is not None:
            chan.send(1, "x", self.l, "hash")
        xs = self.source.x_alphabet
        if match.size == 1:
            return SimOutcome(xs[i], self.source.y_alphabet[j], xs[i],
                              xs[int(match[0])], self.l, None, 1, chan)
        cause = ("multiple_match" if match.size > 1
                 else ("tail" if not self.typical[i, j] else "no_match"))
        return SimOutcome(xs[i], self.source.y_alphabet[j], xs[i], None,
                          self.l, cause, 1, chan)

    # -- exact enumeration ---------------------------------------------------

    def exact_atom_count(self) -> int:
        live = int((self.source.mass > 0).sum())
        return live * family_size(self.width, self.l)

    def exact_view_law(self) -> FiniteDistribution:
        if self.exact_atom_count() > ENUMERATION_CAP:
            raise TooLarge("seed space too large for exact enumeration")
        seed_p = 1.0 / family_size(self.width, self.l)
        acc: Counter = Counter()
        for i, x in enumerate(self.source.x_alphabet):
            for j, y in enumerate(self.source.y_alphabet):
                w = float(self.source.mass[i, j])
                if w <= 0:
                    continue
                for fam in enumerate_family(self.width, self.l):
                    out = self.run(None, x=x, y=y, fam=fam)
                    acc[out.view] += w * seed_p
        return FiniteDistribution.from_mapping(acc)

    def true_view_law(self) -> FiniteDistribution:
        acc: Counter = Counter()
        for i, x in enumerate(self.source.x_alphabet):
            for j, y in enumerate(self.source.y_alphabet):
                w = float(self.source.mass[i, j])
                if w > 0:
                    acc[(x, x, x, y)] += w
        return FiniteDistribution.from_mapping(acc)


def protocol1_sw(source: JointSource, l: int, gamma: float, seed,
                 aux: np.ndarray | None = None) -> SimOutcome:
    """One trial of the one-shot coder."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return SlepianWolfCoder(source, l, gamma, aux).run(rng)


def protocol1_batch(coder: SlepianWolfCoder, trials: int,
                    master_seed: int) -> tuple[int, np.ndarray]:
    """Vectorized trials; returns (#wrong-or-failed decodes, bits array)."""
    rng = np.random.default_rng([master_seed, 0])
    xi, yj = coder.source.sample(rng, size=trials)
    mats = rng.integers(0, 2, size=(trials, coder.l, coder.width), dtype=np.uint8)
    # offsets cancel in collision checks, skip them
    hv = np.einsum("tlw,mw->tlm", mats, coder.enc) % 2  # (T, l, M)
    packed = np.einsum("tlm,l->tm", hv.astype(np.int64),
                       1 << np.arange(coder.l, dtype=np.int64))
    own = packed[np.arange(trials), xi]
    collide = packed == own[:, None]          # (T, M)
    typical = coder.typical[:, yj].T          # (T, M)
    n_match = (collide & typical).sum(axis=1)
    bad = n_match != 1
    # unique match that is not the true value counts as a silent error
    unique = ~bad
    if unique.any():
        sel = np.nonzero(unique)[0]
        decoded = np.argmax(collide[sel] & typical[sel], axis=1)
        bad[sel] = decoded != xi[sel]
    bits = np.full(trials, coder.l, dtype=np.int64)
    return int(bad.sum()), bits


# ---------------------------------------------------------------------------
# engine 2: interactive compression
# ---------------------------------------------------------------------------


class InteractiveSWCoder:
    """Slice-by-slice compression of X with one-bit feedback per slice.

    First l hash bits, then one delta-bit hash block per extra slice; the
    receiver searches slice i after i blocks and answers ACK or NACK.  A
    trial terminating in slice i costs exactly l + (i - 1) delta + i bits.
    """

    def __init__(self, source: JointSource, cfg: SliceConfig,
                 l: int | None = None, aux: np.ndarray | None = None):
        self.source = source
        self.cfg = cfg
        self.delta = _int_param(cfg.delta, "delta")
        self.n_slices = cfg.n_slices
        if l is None:
            l = math.ceil(cfg.lambda_min + cfg.delta + cfg.gamma - 1e-9)
        self.l = _int_param(l, "l")
        cond = source.p_x_given_y if aux is None else np.asarray(aux, float)
        self.h_q = _conditional_density(cond)
        vec = np.vectorize(cfg.slice_of)
        self.slice_of = np.where(np.isfinite(self.h_q),
                                 vec(np.where(np.isfinite(self.h_q),
                                              self.h_q, 0.0)), 0).astype(int)
        self.width = encoding_width(len(source.x_alphabet))
        self.enc = encode_universe(len(source.x_alphabet), self.width)
        self.total_hash_bits = self.l + (self.n_slices - 1) * self.delta
        self.members = [[np.nonzero(self.slice_of[:, j] == i)[0]
                         for i in range(self.n_slices + 1)]
                        for j in range(len(source.y_alphabet))]

    def pos_at(self, i: int) -> int:
        return self.l + (i - 1) * self.delta

    def tail_mass(self) -> float:
        return float(self.source.mass[self.slice_of == 0].sum())

    def analytic_error_bound(self) -> float:
        return self.tail_mass() + self.n_slices * 2.0 ** (-self.cfg.gamma)

    def bits_for_slice(self, i: int) -> int:
        return self.pos_at(i) + i

    def run(self, rng, x=None, y=None, fam: HashFamily | None = None,
            log: bool = False) -> SimOutcome:
        if x is None:
            i, j = self.source.sample(rng)
        else:
            i, j = self.source.x_index[x], self.source.y_index[y]
        if fam is None:
            fam = draw_hash(self.width, self.total_hash_bits, rng)
        bits_all = fam.apply_bits(self.enc)  # (M, total_hash_bits)
        chan = ChannelLog() if log else None
        xs, ys = self.source.x_alphabet, self.source.y_alphabet
        decoded, cause, hit = None, None, self.n_slices
        for s in range(1, self.n_slices + 1):
            pos = self.pos_at(s)
            if chan is not None:
                chan.send(s, "x", self.l if s == 1 else self.delta, "hash")
            cand = self.members[j][s]
            ok = cand[np.all(bits_all[cand, :pos] == bits_all[i, :pos], axis=1)]
            if chan is not None:
                chan.send(s, "y", 1, "ack" if ok.size == 1 else "nack")
            if ok.size == 1:
                decoded, hit = int(ok[0]), s
                break
            if ok.size > 1 and s > 1:
                cause, hit = "multiple_match", s
                break
        if decoded is None and cause is None:
            cause = "tail" if self.slice_of[i, j] == 0 else "no_match"
        bits = self.bits_for_slice(hit)
        return SimOutcome(xs[i], ys[j], xs[i],
                          None if decoded is None else xs[decoded],
                          bits, cause, hit, chan)

    def exact_atom_count(self) -> int:
        live = int((self.source.mass > 0).sum())
        return live * family_size(self.width, self.total_hash_bits)

    def exact_view_law(self) -> FiniteDistribution:
        if self.exact_atom_count() > ENUMERATION_CAP:
            raise TooLarge("seed space too large for exact enumeration")
        seed_p = 1.0 / family_size(self.width, self.total_hash_bits)
        acc: Counter = Counter()
        for i, x in enumerate(self.source.x_alphabet):
            for j, y in enumerate(self.source.y_alphabet):
                w = float(self.source.mass[i, j])
                if w <= 0:
                    continue
                for fam in enumerate_family(self.width, self.total_hash_bits):
                    out = self.run(None, x=x, y=y, fam=fam)
                    acc[out.view] += w * seed_p
        return FiniteDistribution.from_mapping(acc)

    def true_view_law(self) -> FiniteDistribution:
        acc: Counter = Counter()
        for i, x in enumerate(self.source.x_alphabet):
            for j, y in enumerate(self.source.y_alphabet):
                w = float(self.source.mass[i, j])
                if w > 0:
                    acc[(x, x, x, y)] += w
        return FiniteDistribution.from_mapping(acc)


def protocol2_interactive_sw(source: JointSource, cfg: SliceConfig, seed,
                             l: int | None = None,
                             aux: np.ndarray | None = None) -> SimOutcome:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return InteractiveSWCoder(source, cfg, l, aux).run(rng)


def protocol2_batch(coder: InteractiveSWCoder, trials: int,
                    master_seed: int) -> dict:
    """Vectorized trials of the interactive coder.

    Returns wrong/declared counts, per-trial bits and terminating slices.
    """
    rng = np.random.default_rng([master_seed, 0])
    M = len(coder.source.x_alphabet)
    xi, yj = coder.source.sample(rng, size=trials)
    L = coder.total_hash_bits
    mats = rng.integers(0, 2, size=(trials, L, coder.width), dtype=np.uint8)
    hv = np.einsum("tlw,mw->tml", mats, coder.enc) % 2  # (T, M, L)
    own = hv[np.arange(trials), xi]                     # (T, L)
    slc = coder.slice_of[:, yj].T                       # (T, M)
    active = np.ones(trials, dtype=bool)
    decoded = np.full(trials, -1, dtype=np.int64)
    hit = np.full(trials, coder.n_slices, dtype=np.int64)
    declared = np.zeros(trials, dtype=bool)
    for s in range(1, coder.n_slices + 1):
        pos = coder.pos_at(s)
        agree = np.all(hv[:, :, :pos] == own[:, None, :pos], axis=2)  # (T, M)
        match = agree & (slc == s)
        cnt = match.sum(axis=1)
        ack = active & (cnt == 1)
        decoded[ack] = np.argmax(match[ack], axis=1)
        hit[ack] = s
        if s > 1:
            multi = active & (cnt > 1)
            declared |= multi
            hit[multi] = s
            active &= ~multi
        active &= ~ack
    declared |= active  # exhausted every slice
    wrong = declared | (decoded != xi)
    bits = coder.l + (hit - 1) * coder.delta + hit
    return {
        "wrong": int(wrong.sum()),
        "declared": int(declared.sum()),
        "bits": bits,
        "slice_hit": hit,
        "trials": trials,
    }


# ---------------------------------------------------------------------------
# engine 3: one-round simulation with a shared seed
# ---------------------------------------------------------------------------


class RoundSimulator:
    """Simulate one message M ~ P(.|X) so the receiver learns it too.

    The transmitter samples M conditioned on the first k hash bits agreeing
    with the shared uniform string, then finishes the transmission with the
    interactive coder; the first k hash bits are never sent.
    """

    def __init__(self, source: JointSource, p_m_given_x: np.ndarray,
                 messages: Sequence, cfg_rx: SliceConfig, k: int,
                 aux_m_given_y: np.ndarray | None = None):
        self.source = source
        self.messages = tuple(messages)
        self.p_m_given_x = np.asarray(p_m_given_x, dtype=float)
        nx, ny = source.mass.shape
        M = len(self.messages)
        if self.p_m_given_x.shape != (nx, M):
            raise OutOfRange("message channel has the wrong shape")
        self.cfg_rx = cfg_rx
        self.delta = _int_param(cfg_rx.delta, "delta")
        self.n_slices = cfg_rx.n_slices
        self.l = _int_param(
            math.ceil(cfg_rx.lambda_min + cfg_rx.delta + cfg_rx.gamma - 1e-9), "l")
        self.total_hash_bits = self.l + (self.n_slices - 1) * self.delta
        if not 0 <= k <= self.total_hash_bits:
            raise OutOfRange("shared prefix k must fit inside the hash budget")
        self.k = int(k)
        self.p_m_given_y = (self._true_m_given_y()
                            if aux_m_given_y is None
                            else np.asarray(aux_m_given_y, dtype=float))
        h_rx = _conditional_density(self.p_m_given_y.T)  # (M, ny)
        vec = np.vectorize(cfg_rx.slice_of)
        self.slice_rx = np.where(np.isfinite(h_rx),
                                 vec(np.where(np.isfinite(h_rx), h_rx, 0.0)),
                                 0).astype(int)
        self.width = encoding_width(M)
        self.enc = encode_universe(M, self.width)
        self.cum_m_given_x = np.cumsum(self.p_m_given_x, axis=1)
        if self.total_hash_bits > 62:
            raise OutOfRange("hash budget exceeds 62 bits")
        self._pow2 = (1 << np.arange(self.total_hash_bits, dtype=np.int64))

    def _true_m_given_y(self) -> np.ndarray:
        joint_my = np.einsum("xm,xy->my", self.p_m_given_x, self.source.mass)
        py = self.source.p_y
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(py[None, :] > 0, joint_my / py[None, :], 0.0).T

    def pos_at(self, i: int) -> int:
        return self.l + (i - 1) * self.delta

    def tail_mass(self) -> float:
        """Probability that (M, Y) falls in the receiver tail slice."""
        joint_my = np.einsum("xm,xy->my", self.p_m_given_x, self.source.mass)
        return float(joint_my[self.slice_rx == 0].sum())

    def joint_mx(self) -> np.ndarray:
        """Joint table P(M, X) with messages on rows."""
        return (self.p_m_given_x * self.source.p_x[:, None]).T

    def _sample_conditioned(self, rng, i: int, allowed: np.ndarray,
                            restrict: np.ndarray | None = None) -> int:
        """Sample M ~ P(.|x_i) restricted to ``allowed`` (boolean mask)."""
        mask = allowed.copy()
        if restrict is not None:
            mask &= restrict
        w = self.p_m_given_x[i] * mask
        tot = w.sum()
        if tot <= 0.0:
            # empty conditioning event: fall back to the canonical first
            # supported message (within the restriction when one is given)
            support = self.p_m_given_x[i] > 0
            if restrict is not None:
                support = support & restrict
            base = np.nonzero(support)[0]
            if base.size:
                return int(base[0])
            return 0
        u = rng.random() if rng is not None else 0.0
        if rng is None:
            # deterministic conditioning only (exact mode)
            nz = np.nonzero(w)[0]
            if nz.size != 1:
                raise OutOfRange("exact mode needs a deterministic choice")
            return int(nz[0])
        return int(np.searchsorted(np.cumsum(w / tot), u, side="right"))

    def hash_ints(self, fam: HashFamily) -> np.ndarray:
        """Packed hash outputs of every message, bit p at weight 2^p."""
        return fam.apply_bits(self.enc).astype(np.int64) @ self._pow2

    def run(self, rng, x=None, y=None, fam: HashFamily | None = None,
            u_bits: np.ndarray | None = None, log: bool = False,
            restrict: np.ndarray | None = None,
            extra_bits: int = 0, k: int | None = None) -> SimOutcome:
        k = self.k if k is None else k
        if x is None:
            i, j = self.source.sample(rng)
        else:
            i, j = self.source.x_index[x], self.source.y_index[y]
        if fam is None:
            fam = draw_hash(self.width, self.total_hash_bits, rng)
        if u_bits is None:
            u_int = int(rng.integers(0, 1 << k)) if k else 0
        else:
            u_int = int(np.dot(u_bits.astype(np.int64), self._pow2[:k]))
        h = self.hash_ints(fam)  # (M,) packed
        mask_k = (1 << k) - 1
        prefix_ok = (h & mask_k) == u_int
        m_star = self._sample_conditioned(rng, i, prefix_ok, restrict)
        received = (int(h[m_star]) & ~mask_k) | u_int
        chan = ChannelLog() if log else None
        slc = self.slice_rx[:, j]
        decoded, cause, hit = None, None, self.n_slices
        for s in range(1, self.n_slices + 1):
            pos = self.pos_at(s)
            if chan is not None:
                sent_now = max(0, pos - k) - max(0, self.pos_at(s - 1) - k) \
                    if s > 1 else max(0, pos - k)
                chan.send(s, "x", sent_now, "hash")
            mask_pos = (1 << pos) - 1
            ok = np.nonzero((slc == s) & (((h ^ received) & mask_pos) == 0))[0]
            if chan is not None:
                chan.send(s, "y", 1, "ack" if ok.size == 1 else "nack")
            if ok.size == 1:
                decoded, hit = int(ok[0]), s
                break
            if ok.size > 1 and s > 1:
                cause, hit = "multiple_match", s
                break
        if decoded is None and cause is None:
            cause = ("tail" if self.slice_rx[m_star, j] == 0 else "no_match")
        bits = max(0, self.pos_at(hit) - k) + hit + extra_bits
        xs, ys = self.source.x_alphabet, self.source.y_alphabet
        return SimOutcome(xs[i], ys[j], self.messages[m_star],
                          None if decoded is None else self.messages[decoded],
                          bits, cause, hit, chan)

    # -- exact enumeration ---------------------------------------------------

    def exact_atom_count(self) -> int:
        live = int((self.source.mass > 0).sum())
        M = len(self.messages)
        return live * family_size(self.width, self.total_hash_bits) \
            * (1 << self.k) * M

    def exact_view_law(self) -> FiniteDistribution:
        if self.exact_atom_count() > ENUMERATION_CAP:
            raise TooLarge("seed space too large for exact enumeration")
        seed_p = 1.0 / family_size(self.width, self.total_hash_bits)
        u_p = 2.0 ** (-self.k)
        acc: Counter = Counter()
        u_space = list(itertools.product((0, 1), repeat=self.k))
        for i, x in enumerate(self.source.x_alphabet):
            for j, y in enumerate(self.source.y_alphabet):
                w = float(self.source.mass[i, j])
                if w <= 0:
                    continue
                for fam in enumerate_family(self.width, self.total_hash_bits):
                    bits_all = fam.apply_bits(self.enc)
                    for u in u_space:
                        ub = np.array(u, dtype=np.uint8)
                        prefix_ok = np.all(bits_all[:, :self.k] == ub[None, :],
                                           axis=1)
                        wt = self.p_m_given_x[i] * prefix_ok
                        tot = wt.sum()
                        base = w * seed_p * u_p
                        if tot <= 0.0:
                            sup = np.nonzero(self.p_m_given_x[i] > 0)[0]
                            fb = int(sup[0]) if sup.size else 0
                            out = self._run_fixed(i, j, fam, ub, fb)
                            acc[out.view] += base
                            continue
                        for m in np.nonzero(wt)[0]:
                            out = self._run_fixed(i, j, fam, ub, int(m))
                            acc[out.view] += base * wt[m] / tot
        return FiniteDistribution.from_mapping(acc)

    def _run_fixed(self, i: int, j: int, fam, u_bits, m_star: int) -> SimOutcome:
        """Deterministic decode pass for a fixed transmitter choice."""
        bits_all = fam.apply_bits(self.enc)
        received = bits_all[m_star].copy()
        received[: self.k] = u_bits
        decoded, cause, hit = None, None, self.n_slices
        for s in range(1, self.n_slices + 1):
            pos = self.pos_at(s)
            cand = np.nonzero(self.slice_rx[:, j] == s)[0]
            ok = cand[np.all(bits_all[cand, :pos] == received[None, :pos],
                             axis=1)]
            if ok.size == 1:
                decoded, hit = int(ok[0]), s
                break
            if ok.size > 1 and s > 1:
                cause, hit = "multiple_match", s
                break
        if decoded is None and cause is None:
            cause = ("tail" if self.slice_rx[m_star, j] == 0 else "no_match")
        bits = max(0, self.pos_at(hit) - self.k) + hit
        xs, ys = self.source.x_alphabet, self.source.y_alphabet
        return SimOutcome(xs[i], ys[j], self.messages[m_star],
                          None if decoded is None else self.messages[decoded],
                          bits, cause, hit, None)

    def true_view_law(self) -> FiniteDistribution:
        acc: Counter = Counter()
        for i, x in enumerate(self.source.x_alphabet):
            for j, y in enumerate(self.source.y_alphabet):
                w = float(self.source.mass[i, j])
                if w <= 0:
                    continue
                for m, msg in enumerate(self.messages):
                    pm = float(self.p_m_given_x[i, m])
                    if pm > 0:
                        acc[(msg, msg, x, y)] += w * pm
        return FiniteDistribution.from_mapping(acc)


def protocol3_simulate_round(source: JointSource, p_m_given_x, messages,
                             cfg_rx: SliceConfig, k: int, seed) -> SimOutcome:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return RoundSimulator(source, p_m_given_x, messages, cfg_rx, k).run(rng)


# ---------------------------------------------------------------------------
# engine 4: one-round simulation with a transmitted slice index
# ---------------------------------------------------------------------------


class ImprovedRoundSimulator:
    """Round simulation where the transmitter reveals its own density slice.

    The slice index J of -log2 P(M|x) is sampled and sent with
    ceil(log2 N) + 1 bits; indices of small prior mass are rejected outright.
    Knowing J certifies enough min-entropy to share k(J) hash bits for free.
    """

    def __init__(self, source: JointSource, p_m_given_x: np.ndarray,
                 messages: Sequence, cfg_rx: SliceConfig, cfg_tx: SliceConfig,
                 k_override: int | None = None):
        self.cfg_tx = cfg_tx
        self.inner = RoundSimulator(source, p_m_given_x, messages, cfg_rx, 0)
        h_tx = _conditional_density(self.inner.p_m_given_x.T)  # (M, nx)
        vec = np.vectorize(cfg_tx.slice_of)
        self.slice_tx = np.where(np.isfinite(h_tx),
                                 vec(np.where(np.isfinite(h_tx), h_tx, 0.0)),
                                 0).astype(int)
        n_tx = cfg_tx.n_slices
        nx = len(source.x_alphabet)
        self.p_j_given_x = np.zeros((nx, n_tx + 1))
        for i in range(nx):
            for m in range(len(messages)):
                self.p_j_given_x[i, self.slice_tx[m, i]] += \
                    self.inner.p_m_given_x[i, m]
        self.p_j = self.p_j_given_x.T @ source.p_x
        self.good = self.p_j >= 1.0 / n_tx ** 2 - 1e-12
        self.good[0] = False
        self.j_cost = max(1, math.ceil(math.log2(max(n_tx, 2)))) + 1 \
            if n_tx > 1 else 2
        self.gamma = cfg_rx.gamma
        self.k_override = k_override

    @property
    def source(self):
        return self.inner.source

    @property
    def messages(self):
        return self.inner.messages

    def k_of(self, j: int) -> int:
        if self.k_override is not None:
            return self.k_override
        n_tx = self.cfg_tx.n_slices
        raw = (self.cfg_tx.lambda_min + (j - 1) * self.cfg_tx.delta
               - 2 * math.log2(n_tx) - 2 * self.gamma + 2)
        return max(0, min(int(math.floor(raw)), self.inner.total_hash_bits))

    def tail_mass_tx(self) -> float:
        return float(self.p_j[0])

    def run(self, rng, x=None, y=None, log: bool = False) -> SimOutcome:
        if x is None:
            i, j_y = self.source.sample(rng)
        else:
            i, j_y = self.source.x_index[x], self.source.y_index[y]
        xs, ys = self.source.x_alphabet, self.source.y_alphabet
        cum = np.cumsum(self.p_j_given_x[i])
        jj = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        chan = ChannelLog() if log else None
        if chan is not None:
            chan.send(0, "x", self.j_cost, "index")
        if not self.good[jj]:
            return SimOutcome(xs[i], ys[j_y], None, None, self.j_cost,
                              "bad_J", 0, chan)
        k = self.k_of(jj)
        restrict = self.slice_tx[:, i] == jj
        out = self.inner.run(rng, x=xs[i], y=ys[j_y], log=log,
                             restrict=restrict, extra_bits=self.j_cost, k=k)
        if chan is not None and out.log is not None:
            chan.messages.extend(out.log.messages)
        return SimOutcome(out.x, out.y, out.tau_x, out.tau_y, out.bits,
                          out.error, out.slice_hit, chan)

    def true_view_law(self) -> FiniteDistribution:
        return self.inner.true_view_law()


def protocol4_improved(source: JointSource, p_m_given_x, messages,
                       cfg_rx: SliceConfig, cfg_tx: SliceConfig,
                       seed) -> SimOutcome:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ImprovedRoundSimulator(source, p_m_given_x, messages,
                                  cfg_rx, cfg_tx).run(rng)


def batch_round_trials(engine, trials: int, master_seed: int,
                       chunk: int = 100_000) -> TrialAggregate:
    """Vectorized trials of a round simulator (engines 3 and 4).

    Statistically equivalent to :func:`run_trials` on the same engine but
    draws all randomness in bulk from one seed stream.
    """
    views: Counter = Counter()
    errors: Counter = Counter()
    bits_parts = []
    mism = 0
    done = 0
    part = 0
    while done < trials:
        n = min(chunk, trials - done)
        v, e, b, mm = _batch_round_chunk(engine, n, [master_seed, part])
        views.update(v)
        errors.update(e)
        bits_parts.append(b)
        mism += mm
        done += n
        part += 1
    return TrialAggregate(trials, views, np.concatenate(bits_parts), errors,
                          mism)


def _batch_round_chunk(engine, T: int, seed):
    improved = isinstance(engine, ImprovedRoundSimulator)
    inner = engine.inner if improved else engine
    rng = np.random.default_rng(seed)
    M = len(inner.messages)
    L = inner.total_hash_bits
    w = inner.width
    xi, yj = inner.source.sample(rng, size=T)
    blocks = rng.integers(0, 2, size=(T, L, w + 1), dtype=np.uint8)
    hv = (np.einsum("tlw,mw->tml", blocks[:, :, :w], inner.enc)
          + blocks[:, :, w][:, None, :]) % 2
    h = hv.astype(np.int64) @ inner._pow2  # (T, M)

    alive = np.ones(T, dtype=bool)
    j_cost = 0
    k_t = np.full(T, inner.k if not improved else 0, dtype=np.int64)
    restr = np.ones((T, M), dtype=bool)
    bad_j = np.zeros(T, dtype=bool)
    if improved:
        j_cost = engine.j_cost
        cum_rows = np.cumsum(engine.p_j_given_x, axis=1)[xi]
        jj = (cum_rows < rng.random(T)[:, None] * cum_rows[:, -1:]).sum(axis=1)
        bad_j = ~engine.good[jj]
        alive = ~bad_j
        k_arr = np.array([engine.k_of(j)
                          for j in range(engine.cfg_tx.n_slices + 1)])
        k_t = k_arr[jj]
        restr = engine.slice_tx[:, xi].T == jj[:, None]
    k_max = int(k_t.max()) if T else 0
    mask_t = (np.int64(1) << k_t) - 1
    u = rng.integers(0, 1 << k_max, size=T, dtype=np.int64,
                     endpoint=False) & mask_t if k_max else np.zeros(T, np.int64)
    prefix_ok = (h & mask_t[:, None]) == u[:, None]

    wts = inner.p_m_given_x[xi] * (prefix_ok & restr)
    tot = wts.sum(axis=1)
    r2 = rng.random(T) * tot
    m_star = np.minimum((np.cumsum(wts, axis=1) < r2[:, None]).sum(axis=1),
                        M - 1)
    empty = tot <= 0.0
    if empty.any():
        # canonical fallback: first supported message of the restriction
        fb = restr & (inner.p_m_given_x[xi] > 0)
        has = fb.any(axis=1)
        first = np.argmax(fb, axis=1)
        m_star = np.where(empty, np.where(has, first, 0), m_star)

    own = h[np.arange(T), m_star]
    received = (own & ~mask_t) | u
    slc = inner.slice_rx[:, yj].T  # (T, M)
    decoded = np.full(T, -1, dtype=np.int64)
    hit = np.full(T, inner.n_slices, dtype=np.int64)
    multi = np.zeros(T, dtype=bool)
    active = alive.copy()
    for s in range(1, inner.n_slices + 1):
        mask_pos = (1 << inner.pos_at(s)) - 1
        match = (slc == s) & (((h ^ received[:, None]) & mask_pos) == 0)
        cnt = match.sum(axis=1)
        ack = active & (cnt == 1)
        decoded[ack] = np.argmax(match[ack], axis=1)
        hit[ack] = s
        if s > 1:
            mm = active & (cnt > 1)
            multi |= mm
            hit[mm] = s
            active &= ~mm
        active &= ~ack
    exhausted = active
    tail = exhausted & (slc[np.arange(T), m_star] == 0)
    pos_hit = inner.l + (hit - 1) * inner.delta
    bits = np.maximum(0, pos_hit - k_t) + hit + j_cost
    bits[bad_j] = j_cost

    cause = np.zeros(T, dtype=np.int64)  # 0 ok
    cause[exhausted & ~tail] = 2
    cause[tail] = 1
    cause[multi] = 3
    cause[bad_j] = 4
    errors = Counter()
    names = {1: "tail", 2: "no_match", 3: "multiple_match", 4: "bad_J"}
    for code, name in names.items():
        c = int((cause == code).sum())
        if c:
            errors[name] = c

    tx_col = np.where(bad_j, -1, m_star)
    cols = np.stack([tx_col, decoded, xi, yj], axis=1)
    uniq, counts = np.unique(cols, axis=0, return_counts=True)
    msgs = inner.messages
    xs, ys = inner.source.x_alphabet, inner.source.y_alphabet
    views = Counter()
    for (a, d, i, j), c in zip(uniq, counts):
        views[(None if a < 0 else msgs[a],
               None if d < 0 else msgs[d], xs[i], ys[j])] = int(c)
    mism = int((tx_col != decoded).sum())
    return views, errors, bits, mism


def protocol3_tv_trials(engine, trials: int, master_seed: int):
    """Convenience: batch trials plus aggregate for plug-in estimation."""
    return batch_round_trials(engine, trials, master_seed)


# ---------------------------------------------------------------------------
# engine 5: full protocol simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundPlan:
    """Per-round slicing: ``rx`` covers the receiver density, ``tx`` the
    transmitter density."""
    rx: SliceConfig
    tx: SliceConfig


class ProtocolSimulator:
    """Round-by-round simulation of an explicit transcript law.

    Odd rounds are spoken by party "x".  Each party tracks its own history;
    after a silent decoding error the parties simply diverge, which the view
    distance then charges in full.  The run aborts once the bit budget
    ``l_max`` is exceeded or a round declares an error.
    """

    def __init__(self, law: TranscriptLaw, plans: Sequence[RoundPlan],
                 l_max: float = math.inf, k_override: int | None = None):
        self.law = law
        self.plans = tuple(plans)
        if len(self.plans) != law.n_rounds:
            raise OutOfRange("need one round plan per protocol round")
        self.l_max = l_max
        self.k_override = k_override
        self.src = law.source
        # per (round, history) sub-engines on the global round universe
        self.round_universe = [law.round_messages(t)
                               for t in range(1, law.n_rounds + 1)]
        self.engines: dict = {}
        for t in range(1, law.n_rounds + 1):
            universe = self.round_universe[t - 1]
            uindex = {m: a for a, m in enumerate(universe)}
            for hist in law.histories(t):
                view = law.round_view(t, hist)
                M = len(universe)
                if t % 2 == 1:
                    p_tx = np.zeros((len(self.src.x_alphabet), M))
                    p_rx = np.zeros((len(self.src.y_alphabet), M))
                    own_tx, own_rx = view.p_m_given_x, view.p_m_given_y
                else:
                    p_tx = np.zeros((len(self.src.y_alphabet), M))
                    p_rx = np.zeros((len(self.src.x_alphabet), M))
                    own_tx, own_rx = view.p_m_given_y, view.p_m_given_x
                for a, m in enumerate(view.messages):
                    p_tx[:, uindex[m]] = own_tx[:, a]
                    p_rx[:, uindex[m]] = own_rx[:, a]
                self.engines[(t, hist)] = self._make_engine(
                    t, p_tx, p_rx, universe, view)

    def _make_engine(self, t, p_tx, p_rx, universe, view):
        plan = self.plans[t - 1]
        # swap the source orientation so the transmitter is always "x"
        if t % 2 == 1:
            src = self.src
        else:
            src = JointSource(self.src.y_alphabet, self.src.x_alphabet,
                              self.src.mass.T)
        eng = ImprovedRoundSimulator(src, p_tx, universe, plan.rx, plan.tx,
                                     k_override=self.k_override)
        # reweight the slice-index prior by the history-conditional
        # transmitter marginal; the constructor used the unconditional one
        hist_tx = view.p_hist_xy.sum(axis=1 if t % 2 == 1 else 0)
        total = hist_tx.sum()
        if total > 0:
            eng.p_j = eng.p_j_given_x.T @ (hist_tx / total)
            eng.good = eng.p_j >= 1.0 / plan.tx.n_slices ** 2 - 1e-12
            eng.good[0] = False
        eng.inner.p_m_given_y = p_rx
        h_rx = _conditional_density(p_rx.T)
        vec = np.vectorize(plan.rx.slice_of)
        eng.inner.slice_rx = np.where(
            np.isfinite(h_rx),
            vec(np.where(np.isfinite(h_rx), h_rx, 0.0)), 0).astype(int)
        return eng

    def run(self, rng, x=None, y=None, chains=None,
            log: bool = False) -> SimOutcome:
        if x is None:
            i, j = self.src.sample(rng)
            x, y = self.src.x_alphabet[i], self.src.y_alphabet[j]
        hist_x: tuple = ()
        hist_y: tuple = ()
        total_bits = 0
        chan = ChannelLog() if log else None
        for t in range(1, self.law.n_rounds + 1):
            odd = t % 2 == 1
            tx_hist = hist_x if odd else hist_y
            rx_hist = hist_y if odd else hist_x
            eng = self.engines.get((t, tx_hist))
            rx_eng = self.engines.get((t, rx_hist))
            if eng is None or rx_eng is None:
                return SimOutcome(x, y, None, None, total_bits, "no_match",
                                  t - 1, chan)
            out = self._run_round(eng, rx_eng, rng, x if odd else y,
                                  y if odd else x,
                                  chains[t - 1] if chains else None)
            total_bits += out.bits
            if chan is not None and out.log is not None:
                chan.messages.extend(out.log.messages)
            if out.error is not None:
                return SimOutcome(x, y, None, None, total_bits, out.error,
                                  t - 1, chan)
            if total_bits > self.l_max:
                return SimOutcome(x, y, None, None, total_bits,
                                  "budget_exceeded", t - 1, chan)
            hist_x = hist_x + ((out.tau_x,) if odd else (out.tau_y,))
            hist_y = hist_y + ((out.tau_y,) if odd else (out.tau_x,))
        return SimOutcome(x, y, hist_x, hist_y, total_bits, None,
                          self.law.n_rounds, chan)

    def _run_round(self, eng: ImprovedRoundSimulator,
                   rx_eng: ImprovedRoundSimulator, rng, tx_sym, rx_sym,
                   chain) -> SimOutcome:
        """One round where transmitter tables and receiver tables may come
        from different histories."""
        i = eng.source.x_index[tx_sym]
        j_y = eng.source.y_index[rx_sym]
        if rng is None:
            cum = np.cumsum(eng.p_j_given_x[i])
            nz = np.nonzero(eng.p_j_given_x[i] > 0)[0]
            if nz.size != 1:
                raise OutOfRange("exact mode needs deterministic rounds")
            jj = int(nz[0])
        else:
            cum = np.cumsum(eng.p_j_given_x[i])
            jj = int(np.searchsorted(cum, rng.random() * cum[-1],
                                     side="right"))
        if not eng.good[jj]:
            return SimOutcome(tx_sym, rx_sym, None, None, eng.j_cost,
                              "bad_J", 0, None)
        k = eng.k_of(jj)
        restrict = eng.slice_tx[:, i] == jj
        inner = eng.inner
        fam = chain if chain is not None else None
        u_bits = (np.zeros(k, dtype=np.uint8) if rng is None and k == 0
                  else None)
        if rng is None and k > 0:
            raise OutOfRange("exact mode requires k = 0 rounds")
        # decode against the receiver-history slice table
        saved = inner.slice_rx
        inner.slice_rx = rx_eng.inner.slice_rx
        try:
            out = inner.run(rng, x=tx_sym, y=rx_sym, fam=fam,
                            u_bits=np.zeros(0, dtype=np.uint8) if rng is None
                            else u_bits,
                            restrict=restrict, extra_bits=eng.j_cost, k=k)
        finally:
            inner.slice_rx = saved
        return out

    def true_view_law(self) -> FiniteDistribution:
        acc: Counter = Counter()
        for k, tau in enumerate(self.law.transcripts):
            for i, x in enumerate(self.src.x_alphabet):
                for j, y in enumerate(self.src.y_alphabet):
                    w = float(self.law.joint[k, i, j])
                    if w > 0:
                        acc[(tau, tau, x, y)] += w
        return FiniteDistribution.from_mapping(acc)

    # -- exact enumeration (deterministic rounds, k = 0) ---------------------

    def _deterministic(self) -> bool:
        p = self.law.p_tau_given_xy
        return bool(np.all((p < 1e-12) | (p > 1 - 1e-12)))

    def exact_atom_count(self) -> int:
        total = int((self.src.mass > 0).sum())
        for t in range(1, self.law.n_rounds + 1):
            eng = next(e for (tt, _), e in self.engines.items() if tt == t)
            total *= family_size(eng.inner.width, eng.inner.total_hash_bits)
        return total

    def exact_view_law(self) -> FiniteDistribution:
        if not self._deterministic():
            raise OutOfRange("exact chains are supported for deterministic "
                             "target protocols only")
        if self.exact_atom_count() > ENUMERATION_CAP:
            raise TooLarge("seed space too large for exact enumeration")
        fams = []
        seed_p = 1.0
        for t in range(1, self.law.n_rounds + 1):
            eng = next(e for (tt, _), e in self.engines.items() if tt == t)
            fams.append(list(enumerate_family(eng.inner.width,
                                              eng.inner.total_hash_bits)))
            seed_p /= len(fams[-1])
        acc: Counter = Counter()
        for i, x in enumerate(self.src.x_alphabet):
            for j, y in enumerate(self.src.y_alphabet):
                w = float(self.src.mass[i, j])
                if w <= 0:
                    continue
                for combo in itertools.product(*fams):
                    out = self.run(None, x=x, y=y, chains=list(combo))
                    acc[out.view] += w * seed_p
        return FiniteDistribution.from_mapping(acc)


def protocol5_full(law: TranscriptLaw, plans: Sequence[RoundPlan], seed,
                   l_max: float = math.inf,
                   k_override: int | None = None) -> SimOutcome:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ProtocolSimulator(law, plans, l_max, k_override).run(rng)


def auto_round_plans(law: TranscriptLaw, gamma: float = 4.0) -> list[RoundPlan]:
    """Default slice plans from the per-round density spectra."""
    from .probcore import auto_slice_config
    plans = []
    for t in range(1, law.n_rounds + 1):
        rx_spec = round_density_spectrum(law, t, "rx")
        tx_spec = round_density_spectrum(law, t, "tx")
        plans.append(RoundPlan(rx=auto_slice_config(rx_spec, gamma=gamma),
                               tx=auto_slice_config(tx_spec, gamma=gamma)))
    return plans


def round_density_spectrum(law: TranscriptLaw, t: int,
                           side: str) -> SpectrumTable:
    """Spectrum of -log2 P(round message | one party, history) at round t.

    ``side`` is "tx" for the speaking party and "rx" for the listener,
    aggregated over histories with their true probabilities.
    """
    odd = t % 2 == 1
    vals, probs = [], []
    for hist in law.histories(t):
        view = law.round_view(t, hist)
        cond = view.p_m_given_x if (odd == (side == "tx")) else view.p_m_given_y
        own_is_x = odd == (side == "tx")
        nx, ny = law.source.mass.shape
        for a, m in enumerate(view.messages):
            for i in range(nx):
                for j in range(ny):
                    w = float(view.p_hist_xy[i, j]
                              * view.p_m_given_xy[a, i, j])
                    if w <= 0:
                        continue
                    p = float(cond[i if own_is_x else j, a])
                    vals.append(-math.log2(p))
                    probs.append(w)
    return SpectrumTable.from_atoms(vals, probs)
