"""Binary POVM, feedback policy, and repeated pump/measure/feedback cycles.

The momentum-resolved operators of one pump cycle are coarse-grained by
detector sign into a two-outcome instrument.  A feedback policy built
from the polar decomposition of the operators at the central momentum
(an initial basis change V, outcome corrections W_+, W_-) undoes the
coherent disturbance of the measurement back-action; repetition then
drives the residual uncertainty F(n) = 1 - (mutual information) toward
zero as the record accumulates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AccuracyError, InvalidParameterError
from .scattering import KrausSet

MAX_CYCLES = 12
PRUNE_THRESHOLD = 1e-15
DEGENERATE_GAP = 1e-8


class DegenerateMeasurementWarning(UserWarning):
    """One outcome of the binary POVM carries no operators at all."""


class BasisAmbiguityWarning(UserWarning):
    """P_{p0} eigenvalues too close to order a basis; V falls back to I."""


@dataclass(frozen=True)
class MeasurementMap:
    """Two-outcome instrument from a momentum-resolved operator set.

    plus_kraus / minus_kraus hold the sqrt(dp)-scaled matrices for the
    transmitted (p > 0) and reflected (p <= 0) detector outcomes; rows
    above the first two are leak channels.  The effects satisfy
    E_plus + E_minus = I within ``defect``.
    """

    plus_kraus: np.ndarray
    minus_kraus: np.ndarray
    e_plus: np.ndarray
    e_minus: np.ndarray
    defect: float

    @property
    def n_channels(self) -> int:
        return self.plus_kraus.shape[1]


@dataclass(frozen=True)
class FeedbackPolicy:
    """Initial rotation and per-outcome corrections from the p0 operators."""

    initial_rotation: np.ndarray
    w_plus: np.ndarray
    w_minus: np.ndarray
    source: tuple[float, np.ndarray, np.ndarray]


@dataclass(frozen=True)
class Branch:
    """One record's worth of conditional state after n cycles.

    ``rho`` is the normalized qubit block; ``leak`` the fraction of the
    branch mass that has left the computational subspace.
    """

    probability: float
    rho: np.ndarray
    leak: float


@dataclass(frozen=True)
class BranchTree:
    """Depth-indexed binary record tree for one input state.

    levels[n-1] maps records w in {0 (reflected), 1 (transmitted)}^n to
    branches; pruned[n-1] is the cumulative mass dropped below the prune
    threshold.  Residual uncertainty needs the trees of both inputs and
    lives in residual_uncertainty().
    """

    initial_rho: np.ndarray
    n_cycles: int
    with_policy: bool
    levels: tuple
    pruned: tuple

    def distribution(self, n: int) -> dict:
        """Record -> probability at depth n (1-based)."""
        if not 1 <= n <= self.n_cycles:
            raise InvalidParameterError(f"depth {n} outside 1..{self.n_cycles}")
        return {w: b.probability for w, b in self.levels[n - 1].items()}

    def ledger_drift(self, n: int) -> float:
        """|sum of probabilities + pruned mass - 1| at depth n."""
        total = sum(b.probability for b in self.levels[n - 1].values())
        return abs(total + self.pruned[n - 1] - 1.0)


def build_povm(kraus: KrausSet) -> MeasurementMap:
    """Coarse-grain the momentum lattice by detector sign.

    The p = 0 point, when the lattice carries one, counts as reflected:
    zero momentum never reaches the transmission detector.
    """
    plus_sel = kraus.p > 0.0
    scale = np.sqrt(kraus.dp)
    plus = np.ascontiguousarray(kraus.a[plus_sel]) * scale
    minus = np.ascontiguousarray(kraus.a[~plus_sel]) * scale
    for name, block in (("transmitted", plus), ("reflected", minus)):
        if block.shape[0] == 0:
            warnings.warn(
                f"no operators on the {name} side: the measurement is "
                "degenerate", DegenerateMeasurementWarning, stacklevel=2)
    e_plus = np.einsum("kij,kil->jl", plus.conj(), plus)
    e_minus = np.einsum("kij,kil->jl", minus.conj(), minus)
    for name, eff in (("E_plus", e_plus), ("E_minus", e_minus)):
        lo = float(np.linalg.eigvalsh(eff).min()) if eff.size else 0.0
        if lo < -1e-10:
            raise AccuracyError(f"{name} has negative eigenvalue {lo:.2e}")
    closure = float(np.linalg.norm(e_plus + e_minus - np.eye(2), ord=2))
    if closure > max(10.0 * kraus.defect, 1e-8):
        raise AccuracyError(
            f"effects close to {closure:.2e}, far beyond the recorded "
            f"completeness defect {kraus.defect:.2e}")
    return MeasurementMap(plus_kraus=plus, minus_kraus=minus, e_plus=e_plus,
                          e_minus=e_minus, defect=kraus.defect)


def polar_decompose(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A = U P with P = (A^dag A)^(1/2); singular directions completed.

    On the null space of P the unitary factor is unconstrained; there U
    is chosen as the unitary nearest the identity (Frobenius norm),
    which for A = diag(2, 0) gives U = I.
    """
    a = np.asarray(a, dtype=complex)
    if a.shape != (2, 2) or not np.all(np.isfinite(a)):
        raise InvalidParameterError("polar_decompose expects a finite 2x2")
    x, sig, yh = np.linalg.svd(a)
    y = yh.conj().T
    p = (y * sig) @ yh
    cut = max(sig[0], 1.0) * 1e-14
    if sig[1] > cut:
        u = x @ yh
    elif sig[0] > cut:
        # rank 1: U y1 = x1 fixed; remaining column phased nearest to I
        x1, y1 = x[:, 0], y[:, 0]
        x2, y2 = x[:, 1], y[:, 1]
        cross = np.vdot(x2, y2)
        phase = 1.0 if abs(cross) < 1e-300 else cross / abs(cross)
        u = np.outer(x1, y1.conj()) + phase * np.outer(x2, y2.conj())
    else:
        u = np.eye(2, dtype=complex)
    return u, p


def build_feedback_policy(kraus: KrausSet) -> FeedbackPolicy:
    """Polar-decompose the qubit blocks at +-p0 into (V, W_+, W_-).

    p0 is the incident-spectrum peak on the transmitted side; the
    reflected partner is the nearest lattice point to -p0.  V is the
    eigenbasis of P_{p0} (descending eigenvalues, first-row phases real
    non-negative); W_+- undo the unitary parts.
    """
    plus_sel = kraus.p > 0.0
    if not plus_sel.any() or not (~plus_sel).any():
        raise InvalidParameterError(
            "need lattice points on both signs to anchor the policy")
    spec = np.where(plus_sel, kraus.spectrum, -1.0)
    i_plus = int(np.argmax(spec))
    p0 = float(kraus.p[i_plus])
    i_minus = int(np.argmin(np.abs(kraus.p + p0)))
    a_plus = kraus.a[i_plus, :2, :]
    a_minus = kraus.a[i_minus, :2, :]

    u_plus, p_pos = polar_decompose(a_plus)
    u_minus, _ = polar_decompose(a_minus)

    evals, evecs = np.linalg.eigh(p_pos)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    if abs(evals[0] - evals[1]) < DEGENERATE_GAP:
        warnings.warn(
            f"P_p0 eigenvalue gap {abs(evals[0] - evals[1]):.2e} below "
            f"{DEGENERATE_GAP}; eigenbasis is arbitrary, using identity",
            BasisAmbiguityWarning, stacklevel=2)
        v = np.eye(2, dtype=complex)
    else:
        for c in range(2):
            lead = evecs[0, c]
            if abs(lead) > 1e-300:
                evecs[:, c] = evecs[:, c] * (lead.conjugate() / abs(lead))
        v = evecs.astype(complex)

    return FeedbackPolicy(initial_rotation=v,
                          w_plus=u_plus.conj().T,
                          w_minus=u_minus.conj().T,
                          source=(p0, np.array(kraus.a[i_plus]),
                                  np.array(kraus.a[i_minus])))


def _validate_density(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise InvalidParameterError("initial state must be 2x2")
    if np.linalg.norm(rho - rho.conj().T) > 1e-10:
        raise InvalidParameterError("initial state must be Hermitian")
    if abs(np.trace(rho).real - 1.0) > 1e-10:
        raise InvalidParameterError("initial state must have unit trace")
    if float(np.linalg.eigvalsh(rho).min()) < -1e-10:
        raise InvalidParameterError("initial state must be positive")
    return rho


def _transfer_pieces(block: np.ndarray):
    """(4x4 qubit transfer, 2x2 leak-gain matrix) for one outcome's list."""
    if block.shape[0] == 0:
        return np.zeros((4, 4), dtype=complex), np.zeros((2, 2), dtype=complex)
    q = block[:, :2, :]
    lk = block[:, 2:, :]
    transfer = np.einsum("pij,plk->iljk", q, q.conj()).reshape(4, 4)
    gain = np.einsum("prj,prk->jk", lk.conj(), lk) if lk.shape[1] else \
        np.zeros((2, 2), dtype=complex)
    return transfer, gain


def simulate_protocol(rho: np.ndarray, mmap: MeasurementMap,
                      policy: FeedbackPolicy | None, n_cycles: int, *,
                      rederive_each_cycle: bool = False,
                      prune_threshold: float = PRUNE_THRESHOLD) -> BranchTree:
    """Expand the binary record tree for one input state.

    Per cycle: rotate by V (first cycle only, unless the per-cycle
    re-diagonalization variant is on), apply the sign-partitioned CP map,
    record the outcome probability, then rotate by W_outcome.  Leaked
    mass is carried per branch and split across outcomes in proportion to
    the qubit-block split, since the leak channels carry no momentum
    operators of their own; it is never corrected.  Branches below
    ``prune_threshold`` are dropped into a per-depth mass ledger.
    """
    rho = _validate_density(rho)
    if not 1 <= int(n_cycles) <= MAX_CYCLES:
        raise InvalidParameterError(f"n_cycles must lie in 1..{MAX_CYCLES}")
    n_cycles = int(n_cycles)

    t_plus, g_plus = _transfer_pieces(mmap.plus_kraus)
    t_minus, g_minus = _transfer_pieces(mmap.minus_kraus)
    transfer = {1: t_plus, 0: t_minus}
    gain = {1: g_plus, 0: g_minus}
    if policy is not None:
        w_out = {1: policy.w_plus, 0: policy.w_minus}

    # branches carry (unnormalized qubit block, absolute leaked mass)
    active = {(): (rho, 0.0)}
    levels = []
    pruned_levels = []
    pruned = 0.0
    for cycle in range(1, n_cycles + 1):
        rotate_in = policy is not None and (cycle == 1 or rederive_each_cycle)
        nxt = {}
        level = {}
        for w in sorted(active):
            q, leak = active[w]
            if rotate_in:
                v = policy.initial_rotation
                q = v @ q @ v.conj().T
            qmass = {}
            newleak = {}
            child_q = {}
            for s in (0, 1):
                qs = (transfer[s] @ q.reshape(4)).reshape(2, 2)
                nl = float(np.einsum("jk,kj->", gain[s], q).real)
                child_q[s] = qs
                qmass[s] = float(np.trace(qs).real)
                newleak[s] = nl
            total = sum(qmass[s] + newleak[s] for s in (0, 1))
            for s in (0, 1):
                share = (qmass[s] + newleak[s]) / total if total > 0 else 0.5
                mass = qmass[s] + newleak[s] + leak * share
                if mass < prune_threshold:
                    pruned += mass
                    continue
                qs = child_q[s]
                if policy is not None:
                    qs = w_out[s] @ qs @ w_out[s].conj().T
                wc = w + (s,)
                nxt[wc] = (qs, leak * share + newleak[s])
                norm = qmass[s] if qmass[s] > 0 else 1.0
                level[wc] = Branch(probability=mass, rho=qs / norm,
                                   leak=(mass - qmass[s]) / mass)
        active = nxt
        levels.append(level)
        pruned_levels.append(pruned)

    return BranchTree(initial_rho=rho, n_cycles=n_cycles,
                      with_policy=policy is not None,
                      levels=tuple(levels), pruned=tuple(pruned_levels))


def _entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0.0]
    return float(-(p * np.log2(p)).sum())


def residual_uncertainty(tree0: BranchTree, tree1: BranchTree) -> np.ndarray:
    """F(n) = 1 - M(n) for equal priors on the two input states.

    M = H(Y) - (H(Y|0) + H(Y|1))/2 over the depth-n record distribution,
    entropies in bits.
    """
    if tree0.n_cycles != tree1.n_cycles:
        raise InvalidParameterError("trees must share the cycle count")
    out = np.empty(tree0.n_cycles)
    for n in range(1, tree0.n_cycles + 1):
        d0 = tree0.distribution(n)
        d1 = tree1.distribution(n)
        records = sorted(set(d0) | set(d1))
        p0 = np.array([d0.get(w, 0.0) for w in records])
        p1 = np.array([d1.get(w, 0.0) for w in records])
        mutual = _entropy(0.5 * (p0 + p1)) - 0.5 * (_entropy(p0)
                                                    + _entropy(p1))
        out[n - 1] = min(1.0, max(0.0, 1.0 - mutual))
    return out


def protocol_series(mmap: MeasurementMap, policy: FeedbackPolicy,
                    n_cycles: int, *, rederive_each_cycle: bool = False):
    """Rows (n, F_feedback, F_nofeedback, accumulated ledger drift).

    Runs both input states with and without the policy; the drift column
    is the worst probability-ledger deviation across the four trees.
    """
    basis = [np.diag([1.0, 0.0]).astype(complex),
             np.diag([0.0, 1.0]).astype(complex)]
    with_fb = [simulate_protocol(r, mmap, policy, n_cycles,
                                 rederive_each_cycle=rederive_each_cycle)
               for r in basis]
    without = [simulate_protocol(r, mmap, None, n_cycles) for r in basis]
    f_fb = residual_uncertainty(*with_fb)
    f_nofb = residual_uncertainty(*without)
    rows = []
    for n in range(1, n_cycles + 1):
        drift = max(t.ledger_drift(n) for t in (*with_fb, *without))
        rows.append((n, float(f_fb[n - 1]), float(f_nofb[n - 1]), drift))
    return rows
