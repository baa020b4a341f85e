"""Stopping boundaries (U_n, L_n) for the open-ended sequential test.

The boundaries are defined recursively under the null rate ``alpha``: at each
step, U_n is the smallest integer whose upper-tail mass (plus everything that
already hit the upper boundary) stays within the spending budget eps_n, and
L_n is the largest integer doing the same on the lower side.  The recursion
keeps only the "alive" distribution of the partial sum restricted to paths
that have not stopped, so memory is proportional to the corridor width.

No per-step renormalization is performed: the budget comparison is against
the raw accumulated hitting mass, and conservation of total mass is asserted
instead (drift budget 1e-10 per 1e4 steps).
"""

from __future__ import annotations

import io
import json
import math
import os
from fractions import Fraction

import numpy as np

from .spending import SpendingSequence

FORMAT_VERSION = 1

#: Allowed drift of total mass from 1, per 1e4 recursion steps.
DRIFT_PER_10K = 1e-10


class BoundaryError(RuntimeError):
    pass


class DegenerateBoundaryError(BoundaryError):
    """Raised when the recursion would produce U_n <= L_n."""

    def __init__(self, n: int):
        super().__init__(
            f"degenerate boundaries at step {n}: the spending sequence admits "
            f"no corridor (U_n <= L_n)"
        )
        self.n = n


def conservation_tolerance(n: int) -> float:
    return DRIFT_PER_10K * max(1.0, n / 1e4)


class BoundaryTable:
    """Boundary arrays plus the alive-state mass needed to extend them.

    Extension is single-writer and in place; a table that will be shared
    across threads should be fully extended first and then treated as
    read-only.
    """

    def __init__(self, alpha: float, spending: SpendingSequence):
        if not (0.0 < alpha < 1.0):
            raise ValueError(f"alpha must be in (0, 1), got {alpha}")
        self.alpha = float(alpha)
        self.spending = spending
        cap = 1024
        self._upper = np.zeros(cap, dtype=np.int64)
        self._lower = np.zeros(cap, dtype=np.int64)
        self._hit_upper = np.zeros(cap)
        self._hit_lower = np.zeros(cap)
        # seed state after step 1: U_1 = 2, L_1 = -1, S_1 ~ Bernoulli(alpha)
        self._upper[1] = 2
        self._lower[1] = -1
        self.n_max = 1
        self._alive = np.array([1.0 - alpha, alpha])
        self._alive_offset = 0
        self._hu = 0.0
        self._hl = 0.0
        self._resumable = True

    # -- accessors ---------------------------------------------------------

    def upper(self, n: int) -> int:
        self._check_range(n)
        return int(self._upper[n])

    def lower(self, n: int) -> int:
        self._check_range(n)
        return int(self._lower[n])

    def hit_upper_cum(self, n: int) -> float:
        self._check_range(n)
        return float(self._hit_upper[n])

    def hit_lower_cum(self, n: int) -> float:
        self._check_range(n)
        return float(self._hit_lower[n])

    def upper_array(self, n: int) -> np.ndarray:
        """U_1..U_n as a read-only view (index 0 holds U_1)."""
        self._check_range(n)
        return self._upper[1 : n + 1]

    def lower_array(self, n: int) -> np.ndarray:
        self._check_range(n)
        return self._lower[1 : n + 1]

    @property
    def alive_mass(self) -> np.ndarray:
        """P_alpha(tau > n_max, S_{n_max} = j) for j starting at alive_offset."""
        return self._alive.copy()

    @property
    def alive_offset(self) -> int:
        return self._alive_offset

    def delta(self, n: int) -> float:
        return self.spending.delta(n)

    def _check_range(self, n: int):
        if not (1 <= n <= self.n_max):
            raise BoundaryError(f"step {n} outside computed range 1..{self.n_max}")

    def mass_conservation_error(self) -> float:
        return abs(float(self._alive.sum()) + self._hu + self._hl - 1.0)

    def check_conservation(self):
        err = self.mass_conservation_error()
        tol = conservation_tolerance(self.n_max)
        if err > tol:
            raise BoundaryError(
                f"mass conservation violated at n={self.n_max}: drift {err:.3e} > {tol:.3e}"
            )

    # -- extension ---------------------------------------------------------

    def _grow(self, n_target: int):
        cap = self._upper.size
        if n_target + 1 <= cap:
            return
        new_cap = max(cap * 2, n_target + 1)
        for name in ("_upper", "_lower", "_hit_upper", "_hit_lower"):
            old = getattr(self, name)
            arr = np.zeros(new_cap, dtype=old.dtype)
            arr[: old.size] = old
            setattr(self, name, arr)

    def extend(self, n_target: int) -> "BoundaryTable":
        """Extend the boundary arrays through step n_target (no-op if shorter)."""
        if n_target <= self.n_max:
            return self
        if not self._resumable:
            raise BoundaryError(
                "table was loaded without alive-state sidecar and cannot be extended"
            )
        self._grow(n_target)
        alpha = self.alpha
        alive = self._alive
        off = self._alive_offset
        hu = self._hu
        hl = self._hl
        upper, lower = self._upper, self._lower
        hit_u, hit_l = self._hit_upper, self._hit_lower
        eps = self.spending.values(n_target)
        for n in range(self.n_max + 1, n_target + 1):
            eps_n = eps[n - 1]
            w = alive.size
            new = np.empty(w + 1)
            np.multiply(alive, 1.0 - alpha, out=new[:w])
            new[w] = 0.0
            new[1:] += alive * alpha
            top = off + w  # largest j with mass
            # minimal j whose upper tail keeps the budget: descend from top+1
            j = top + 1
            tail = 0.0
            while j - 1 >= off and tail + new[j - 1 - off] + hu <= eps_n:
                tail += new[j - 1 - off]
                j -= 1
            u_n = j
            # maximal j whose lower tail keeps the budget: ascend from off-1
            j = off - 1
            ltail = 0.0
            while j + 1 <= top and ltail + new[j + 1 - off] + hl <= eps_n:
                ltail += new[j + 1 - off]
                j += 1
            l_n = j
            if u_n <= l_n:
                raise DegenerateBoundaryError(n)
            hu += tail
            hl += ltail
            alive = new[l_n + 1 - off : u_n - off]
            off = l_n + 1
            upper[n] = u_n
            lower[n] = l_n
            hit_u[n] = hu
            hit_l[n] = hl
        self._alive = alive
        self._alive_offset = off
        self._hu = hu
        self._hl = hl
        self.n_max = n_target
        return self

    # -- persistence -------------------------------------------------------

    def _meta(self) -> dict:
        kind, eps, kref = self.spending.key()
        return {
            "format": FORMAT_VERSION,
            "alpha": self.alpha,
            "epsilon": eps,
            "spending_kind": kind,
            "spending_ref": kref,
            "n_max": self.n_max,
        }

    def save(self, destination) -> None:
        """Write the per-step CSV plus an alive-state sidecar for resumption.

        `destination` may be a path or a text file object; the sidecar is only
        written for paths (a bare stream gets the CSV alone and the loaded
        table will not be extendable).
        """
        close = False
        sidecar = None
        if isinstance(destination, (str, os.PathLike)):
            sidecar = str(destination) + ".state.json"
            fh = open(destination, "w")
            close = True
        else:
            fh = destination
        try:
            fh.write("# seqpval-boundaries " + json.dumps(self._meta()) + "\n")
            fh.write("n,lower,upper,eps_n,hit_lower_cum,hit_upper_cum\n")
            eps = self.spending.values(self.n_max)
            for n in range(1, self.n_max + 1):
                fh.write(
                    f"{n},{self._lower[n]},{self._upper[n]},{float(eps[n - 1])!r},"
                    f"{float(self._hit_lower[n])!r},{float(self._hit_upper[n])!r}\n"
                )
        finally:
            if close:
                fh.close()
        if sidecar is not None:
            state = {
                "meta": self._meta(),
                "alive_offset": self._alive_offset,
                "alive_mass": [float(x) for x in self._alive],
                "hit_upper_cum": self._hu,
                "hit_lower_cum": self._hl,
            }
            with open(sidecar, "w") as sf:
                json.dump(state, sf)

    @classmethod
    def load(cls, source, spending: SpendingSequence | None = None) -> "BoundaryTable":
        """Rebuild a table from `save` output.

        For custom spending the eps_n column is the table itself; for the
        default kind the k parameter is recovered from the header.  A spending
        sequence passed explicitly is checked against the header.
        """
        close = False
        sidecar = None
        if isinstance(source, (str, os.PathLike)):
            sidecar = str(source) + ".state.json"
            fh = open(source)
            close = True
        else:
            fh = source
        try:
            header = fh.readline()
            if not header.startswith("# seqpval-boundaries "):
                raise BoundaryError("not a seqpval boundary file (missing header record)")
            meta = json.loads(header[len("# seqpval-boundaries ") :])
            if meta.get("format") != FORMAT_VERSION:
                raise BoundaryError(f"unsupported boundary file format {meta.get('format')}")
            fh.readline()  # column names
            rows = np.loadtxt(fh, delimiter=",", ndmin=2)
        finally:
            if close:
                fh.close()
        n_max = int(meta["n_max"])
        if rows.shape[0] != n_max or rows.shape[1] != 6:
            raise BoundaryError("boundary file truncated or malformed")
        if meta["spending_kind"] == "default":
            seq = SpendingSequence.default(meta["epsilon"], int(meta["spending_ref"]))
        else:
            seq = SpendingSequence.custom(meta["epsilon"], rows[:, 3])
        if spending is not None and spending.key() != seq.key():
            raise BoundaryError(
                f"spending mismatch: file has {seq.key()}, caller expected {spending.key()}"
            )
        table = cls(meta["alpha"], seq)
        table._grow(n_max)
        ns = rows[:, 0].astype(np.int64)
        if not np.array_equal(ns, np.arange(1, n_max + 1)):
            raise BoundaryError("boundary file rows are not contiguous in n")
        table._lower[1 : n_max + 1] = rows[:, 1].astype(np.int64)
        table._upper[1 : n_max + 1] = rows[:, 2].astype(np.int64)
        table._hit_lower[1 : n_max + 1] = rows[:, 4]
        table._hit_upper[1 : n_max + 1] = rows[:, 5]
        if table._upper[1] != 2 or table._lower[1] != -1:
            raise BoundaryError("boundary file does not start from the seed (U_1, L_1) = (2, -1)")
        table.n_max = n_max
        table._hu = float(table._hit_upper[n_max])
        table._hl = float(table._hit_lower[n_max])
        state = None
        if sidecar is not None and os.path.exists(sidecar):
            with open(sidecar) as sf:
                state = json.load(sf)
        if state is not None:
            if state["meta"] != meta:
                raise BoundaryError(
                    "parameter mismatch between boundary file and alive-state sidecar"
                )
            table._alive = np.asarray(state["alive_mass"], dtype=float)
            table._alive_offset = int(state["alive_offset"])
            table._hu = float(state["hit_upper_cum"])
            table._hl = float(state["hit_lower_cum"])
            table.check_conservation()
        else:
            table._alive = np.array([])
            table._alive_offset = 0
            table._resumable = n_max == 1
            if table._resumable:
                table._alive = np.array([1.0 - table.alpha, table.alpha])
        return table

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.save(buf)
        return buf.getvalue()


def compute_table(
    alpha: float, epsilon: float, k: int = 1000, n: int = 1, spending: SpendingSequence | None = None
) -> BoundaryTable:
    """Convenience constructor: build and extend a table in one call."""
    seq = spending if spending is not None else SpendingSequence.default(epsilon, k)
    return BoundaryTable(alpha, seq).extend(n)


def exact_boundaries(
    alpha, epsilon, k: int | None = 1000, n_max: int = 20, eps_table=None
) -> tuple[list[int], list[int]]:
    """Brute-force boundaries in exact rational arithmetic (test oracle).

    Applies the defining tail-budget minimization literally with
    ``fractions.Fraction``; cost grows quickly with n (intended for n <= ~64).
    Returns (upper, lower) as plain lists indexed so that entry 0 is step 1.
    """
    a = alpha if isinstance(alpha, Fraction) else Fraction(alpha).limit_denominator(10**9)
    e = epsilon if isinstance(epsilon, Fraction) else Fraction(epsilon).limit_denominator(10**9)
    if eps_table is not None:
        eps_of = lambda n: eps_table[n - 1]
    else:
        eps_of = lambda n: e * n / (k + n)
    upper, lower = [2], [-1]
    alive = {0: 1 - a, 1: a}
    hu = Fraction(0)
    hl = Fraction(0)
    for n in range(2, n_max + 1):
        eps_n = eps_of(n)
        new: dict[int, Fraction] = {}
        for j, m in alive.items():
            new[j] = new.get(j, Fraction(0)) + m * (1 - a)
            new[j + 1] = new.get(j + 1, Fraction(0)) + m * a
        js = sorted(new)
        u_n = js[-1] + 1
        tail = Fraction(0)
        for j in reversed(js):
            if tail + new[j] + hu <= eps_n:
                tail += new[j]
                u_n = j
            else:
                break
        l_n = js[0] - 1
        ltail = Fraction(0)
        for j in js:
            if ltail + new[j] + hl <= eps_n:
                ltail += new[j]
                l_n = j
            else:
                break
        if u_n <= l_n:
            raise DegenerateBoundaryError(n)
        hu += tail
        hl += ltail
        alive = {j: m for j, m in new.items() if l_n < j < u_n}
        upper.append(u_n)
        lower.append(l_n)
    return upper, lower
