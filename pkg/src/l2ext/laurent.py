"""Laurent polynomials and matrices over the group ring C[Z^n].

Exponents are exact integers, coefficients are complex doubles.  Zero terms
are pruned only when a coefficient is exactly 0.0, so cancellation that
leaves rounding residue stays visible to callers that check it.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]


class LaurentError(ValueError):
    """Shape or variable-count mismatch."""


class LaurentPoly:
    """Finite sum of monomials c * z_1^m_1 ... z_n^m_n."""

    __slots__ = ("_n", "_terms")

    def __init__(self, num_vars: int, terms: Mapping[Sequence[int], complex] | None = None):
        if num_vars < 1:
            raise LaurentError("num_vars must be >= 1")
        clean: dict[Exponent, complex] = {}
        for exp, c in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != num_vars:
                raise LaurentError(f"exponent {exp} has length != {num_vars}")
            c = complex(c)
            if c != 0:
                clean[exp] = clean.get(exp, 0) + c
                if clean[exp] == 0:
                    del clean[exp]
        self._n = num_vars
        self._terms = clean

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, c: complex, num_vars: int) -> "LaurentPoly":
        return cls(num_vars, {(0,) * num_vars: c})

    @classmethod
    def monomial(cls, exp: Sequence[int], c: complex = 1.0) -> "LaurentPoly":
        return cls(len(exp), {tuple(exp): c})

    @classmethod
    def var(cls, k: int, num_vars: int, power: int = 1) -> "LaurentPoly":
        """The variable z_k (0-based) raised to ``power``."""
        exp = [0] * num_vars
        exp[k] = power
        return cls(num_vars, {tuple(exp): 1.0})

    # -- accessors ----------------------------------------------------
    @property
    def num_vars(self) -> int:
        return self._n

    @property
    def terms(self) -> dict[Exponent, complex]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # -- arithmetic ---------------------------------------------------
    def _coerce(self, other) -> "LaurentPoly":
        if isinstance(other, LaurentPoly):
            if other._n != self._n:
                raise LaurentError(f"num_vars mismatch: {self._n} vs {other._n}")
            return other
        if isinstance(other, (int, float, complex, np.number)):
            return LaurentPoly.constant(other, self._n)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for exp, c in other._terms.items():
            out[exp] = out.get(exp, 0) + c
        return LaurentPoly(self._n, out)

    __radd__ = __add__

    def __neg__(self):
        return LaurentPoly(self._n, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return LaurentPoly(self._n, {e: c * other for e, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Exponent, complex] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0) + c1 * c2
        return LaurentPoly(self._n, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            if len(self._terms) != 1:
                raise LaurentError("negative powers only exist for monomials")
            (e, c), = self._terms.items()
            if c == 0:
                raise LaurentError("zero has no inverse")
            return LaurentPoly(self._n, {tuple(-a * -k for a in e): (1 / c) ** -k})
        out = LaurentPoly.constant(1.0, self._n)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, LaurentPoly):
            return NotImplemented
        return self._n == other._n and self._terms == other._terms

    def __hash__(self):
        return hash((self._n, frozenset(self._terms.items())))

    def involution(self) -> "LaurentPoly":
        """The *-involution of C[Z^n]: c z^m  ->  conj(c) z^-m."""
        return LaurentPoly(
            self._n, {tuple(-e for e in exp): c.conjugate() for exp, c in self._terms.items()}
        )

    def embed(self, num_vars: int, offset: int) -> "LaurentPoly":
        """Reinterpret in a ring with more variables, shifting variable indices."""
        if offset + self._n > num_vars:
            raise LaurentError("embedding does not fit")
        out = {}
        for exp, c in self._terms.items():
            new = [0] * num_vars
            new[offset : offset + self._n] = exp
            out[tuple(new)] = c
        return LaurentPoly(num_vars, out)

    # -- evaluation ---------------------------------------------------
    def eval(self, angles) -> complex:
        angles = np.asarray(angles, dtype=float).reshape(-1)
        if angles.shape[0] != self._n:
            raise LaurentError(f"point has {angles.shape[0]} coordinates, expected {self._n}")
        return complex(self.eval_many(angles[None, :])[0])

    def eval_many(self, angles: np.ndarray) -> np.ndarray:
        """Evaluate at an array of torus points of shape (P, n)."""
        angles = np.asarray(angles, dtype=float)
        if angles.ndim != 2 or angles.shape[1] != self._n:
            raise LaurentError(f"angles must have shape (P, {self._n})")
        out = np.zeros(angles.shape[0], dtype=complex)
        for exp, c in self._terms.items():
            out += c * np.exp(1j * (angles @ np.asarray(exp, dtype=float)))
        return out

    def __repr__(self):
        if not self._terms:
            return "0"
        parts = []
        for exp, c in sorted(self._terms.items()):
            mono = "*".join(
                f"z{k + 1}" if e == 1 else f"z{k + 1}^{e}" for k, e in enumerate(exp) if e
            )
            parts.append(f"({c:g})" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)

    # -- serialization ------------------------------------------------
    def to_terms_json(self) -> list[dict]:
        return [
            {"exp": list(exp), "re": c.real, "im": c.imag}
            for exp, c in sorted(self._terms.items())
        ]

    @classmethod
    def from_terms_json(cls, num_vars: int, terms: Iterable[Mapping]) -> "LaurentPoly":
        out: dict[Exponent, complex] = {}
        for t in terms:
            exp = tuple(int(e) for e in t["exp"])
            out[exp] = out.get(exp, 0) + complex(t.get("re", 0.0), t.get("im", 0.0))
        return cls(num_vars, out)


class LaurentMatrix:
    """Dense row-major matrix of LaurentPoly entries; immutable."""

    __slots__ = ("rows", "cols", "num_vars", "_entries")

    def __init__(self, rows: int, cols: int, num_vars: int, entries: Sequence[LaurentPoly]):
        entries = tuple(entries)
        if len(entries) != rows * cols:
            raise LaurentError(f"expected {rows * cols} entries, got {len(entries)}")
        for p in entries:
            if p.num_vars != num_vars:
                raise LaurentError("entry num_vars mismatch")
        self.rows = rows
        self.cols = cols
        self.num_vars = num_vars
        self._entries = entries

    # -- constructors -------------------------------------------------
    @classmethod
    def from_rows(cls, rows: Sequence[Sequence], num_vars: int) -> "LaurentMatrix":
        """Build from nested lists of LaurentPoly or scalars."""
        rows = [list(r) for r in rows]
        ncols = len(rows[0]) if rows else 0
        if any(len(r) != ncols for r in rows):
            raise LaurentError("ragged rows")
        entries = []
        for r in rows:
            for x in r:
                if not isinstance(x, LaurentPoly):
                    x = LaurentPoly.constant(x, num_vars)
                entries.append(x)
        return cls(len(rows), ncols, num_vars, entries)

    @classmethod
    def zeros(cls, rows: int, cols: int, num_vars: int) -> "LaurentMatrix":
        return cls(rows, cols, num_vars, [LaurentPoly(num_vars)] * (rows * cols))

    @classmethod
    def identity(cls, k: int, num_vars: int) -> "LaurentMatrix":
        one, zero = LaurentPoly.constant(1.0, num_vars), LaurentPoly(num_vars)
        return cls(k, k, num_vars, [one if i == j else zero for i in range(k) for j in range(k)])

    @classmethod
    def from_constant(cls, array, num_vars: int) -> "LaurentMatrix":
        a = np.atleast_2d(np.asarray(array, dtype=complex))
        return cls.from_rows(a.tolist(), num_vars)

    # -- accessors ----------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def entries(self) -> tuple[LaurentPoly, ...]:
        return self._entries

    def __getitem__(self, idx: tuple[int, int]) -> LaurentPoly:
        i, j = idx
        if not (0 <= i < self.rows and 0 <= j < self.cols):
            raise IndexError(idx)
        return self._entries[i * self.cols + j]

    def row_list(self) -> list[list[LaurentPoly]]:
        return [[self[i, j] for j in range(self.cols)] for i in range(self.rows)]

    def max_abs_coeff(self) -> float:
        return max((p.max_abs_coeff() for p in self._entries), default=0.0)

    def __eq__(self, other):
        if not isinstance(other, LaurentMatrix):
            return NotImplemented
        return self.shape == other.shape and self.num_vars == other.num_vars and self._entries == other._entries

    def __hash__(self):
        return hash((self.shape, self.num_vars, self._entries))

    def __repr__(self):
        return f"LaurentMatrix({self.rows}x{self.cols}, n={self.num_vars}, {self.row_list()!r})"

    # -- algebra ------------------------------------------------------
    def _check_vars(self, other: "LaurentMatrix"):
        if self.num_vars != other.num_vars:
            raise LaurentError(f"num_vars mismatch: {self.num_vars} vs {other.num_vars}")

    def __add__(self, other: "LaurentMatrix") -> "LaurentMatrix":
        self._check_vars(other)
        if self.shape != other.shape:
            raise LaurentError(f"shape mismatch {self.shape} vs {other.shape}")
        return LaurentMatrix(
            self.rows, self.cols, self.num_vars, [a + b for a, b in zip(self._entries, other._entries)]
        )

    def __neg__(self) -> "LaurentMatrix":
        return self.scale(-1.0)

    def __sub__(self, other: "LaurentMatrix") -> "LaurentMatrix":
        return self + (-other)

    def __matmul__(self, other: "LaurentMatrix") -> "LaurentMatrix":
        return matmul(self, other)

    def scale(self, c) -> "LaurentMatrix":
        """Multiply every entry by a scalar or a LaurentPoly."""
        return LaurentMatrix(self.rows, self.cols, self.num_vars, [p * c for p in self._entries])

    def adjoint(self) -> "LaurentMatrix":
        return adjoint(self)

    def embed(self, num_vars: int, offset: int) -> "LaurentMatrix":
        return LaurentMatrix(
            self.rows, self.cols, num_vars, [p.embed(num_vars, offset) for p in self._entries]
        )

    # -- evaluation ---------------------------------------------------
    def eval_matrix(self, angles) -> np.ndarray:
        angles = np.asarray(angles, dtype=float).reshape(1, -1)
        return self.eval_many(angles)[0]

    def eval_many(self, angles: np.ndarray) -> np.ndarray:
        """Evaluate at P torus points; returns an array of shape (P, rows, cols)."""
        angles = np.asarray(angles, dtype=float)
        if angles.ndim != 2 or angles.shape[1] != self.num_vars:
            raise LaurentError(f"angles must have shape (P, {self.num_vars})")
        out = np.zeros((angles.shape[0], self.rows, self.cols), dtype=complex)
        # one phase table per distinct exponent keeps large grids cheap
        phases: dict[Exponent, np.ndarray] = {}
        for idx, p in enumerate(self._entries):
            i, j = divmod(idx, self.cols)
            for exp, c in p._terms.items():
                ph = phases.get(exp)
                if ph is None:
                    ph = np.exp(1j * (angles @ np.asarray(exp, dtype=float)))
                    phases[exp] = ph
                out[:, i, j] += c * ph
        return out

    # -- serialization ------------------------------------------------
    def to_json(self) -> dict:
        entries = [
            {"row": i, "col": j, "terms": self[i, j].to_terms_json()}
            for i in range(self.rows)
            for j in range(self.cols)
            if not self[i, j].is_zero()
        ]
        return {"rows": self.rows, "cols": self.cols, "num_vars": self.num_vars, "entries": entries}

    @classmethod
    def from_json(cls, data: Mapping) -> "LaurentMatrix":
        rows, cols, n = int(data["rows"]), int(data["cols"]), int(data["num_vars"])
        grid = [[LaurentPoly(n) for _ in range(cols)] for _ in range(rows)]
        for e in data.get("entries", []):
            i, j = int(e["row"]), int(e["col"])
            if not (0 <= i < rows and 0 <= j < cols):
                raise LaurentError(f"entry ({i}, {j}) outside {rows}x{cols}")
            grid[i][j] = grid[i][j] + LaurentPoly.from_terms_json(n, e["terms"])
        return cls(rows, cols, n, [p for r in grid for p in r])


def eval_poly(p: LaurentPoly, angles) -> complex:
    return p.eval(angles)


def eval_matrix(a: LaurentMatrix, angles) -> np.ndarray:
    return a.eval_matrix(angles)


def adjoint(a: LaurentMatrix) -> LaurentMatrix:
    """Conjugate transpose under the group-ring involution."""
    return LaurentMatrix(
        a.cols,
        a.rows,
        a.num_vars,
        [a[i, j].involution() for j in range(a.cols) for i in range(a.rows)],
    )


def matmul(a: LaurentMatrix, b: LaurentMatrix) -> LaurentMatrix:
    a._check_vars(b)
    if a.cols != b.rows:
        raise LaurentError(f"cannot multiply {a.shape} by {b.shape}")
    entries = []
    for i in range(a.rows):
        for j in range(b.cols):
            acc = LaurentPoly(a.num_vars)
            for k in range(a.cols):
                x, y = a[i, k], b[k, j]
                if not x.is_zero() and not y.is_zero():
                    acc = acc + x * y
            entries.append(acc)
    return LaurentMatrix(a.rows, b.cols, a.num_vars, entries)


def add(a: LaurentMatrix, b: LaurentMatrix) -> LaurentMatrix:
    return a + b


def scale(a: LaurentMatrix, c) -> LaurentMatrix:
    return a.scale(c)


def block_diag(*mats: LaurentMatrix) -> LaurentMatrix:
    if not mats:
        raise LaurentError("block_diag needs at least one matrix")
    n = mats[0].num_vars
    for m in mats:
        if m.num_vars != n:
            raise LaurentError("num_vars mismatch in block_diag")
    rows = sum(m.rows for m in mats)
    cols = sum(m.cols for m in mats)
    grid = [[LaurentPoly(n)] * cols for _ in range(rows)]
    r0 = c0 = 0
    for m in mats:
        for i in range(m.rows):
            for j in range(m.cols):
                grid[r0 + i][c0 + j] = m[i, j]
        r0 += m.rows
        c0 += m.cols
    return LaurentMatrix(rows, cols, n, [p for r in grid for p in r])


def hstack(*mats: LaurentMatrix) -> LaurentMatrix:
    if not mats:
        raise LaurentError("hstack needs at least one matrix")
    n, rows = mats[0].num_vars, mats[0].rows
    for m in mats:
        if m.num_vars != n or m.rows != rows:
            raise LaurentError("hstack needs equal row counts and num_vars")
    grid = [sum((m.row_list()[i] for m in mats), []) for i in range(rows)]
    cols = sum(m.cols for m in mats)
    return LaurentMatrix(rows, cols, n, [p for r in grid for p in r])


def vstack(*mats: LaurentMatrix) -> LaurentMatrix:
    if not mats:
        raise LaurentError("vstack needs at least one matrix")
    n, cols = mats[0].num_vars, mats[0].cols
    for m in mats:
        if m.num_vars != n or m.cols != cols:
            raise LaurentError("vstack needs equal column counts and num_vars")
    entries = [p for m in mats for p in m.entries]
    return LaurentMatrix(sum(m.rows for m in mats), cols, n, entries)


def kron(a: LaurentMatrix, b: LaurentMatrix) -> LaurentMatrix:
    """Kronecker product; both factors must already share num_vars."""
    a._check_vars(b)
    rows, cols = a.rows * b.rows, a.cols * b.cols
    entries = []
    for i in range(rows):
        ia, ib = divmod(i, b.rows)
        for j in range(cols):
            ja, jb = divmod(j, b.cols)
            entries.append(a[ia, ja] * b[ib, jb])
    return LaurentMatrix(rows, cols, a.num_vars, entries)
