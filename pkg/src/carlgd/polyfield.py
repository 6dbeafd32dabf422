"""Polynomial representation of the gradient-descent update field.

The per-step update theta -> theta - eta * grad L(theta) is written, in
shifted coordinates delta = theta - theta_star, as a finite sum

    f(delta) = sum_k F_k @ delta^{(x) k},    k = 0..degree,

with the learning rate folded into every term: F_0 = -eta grad L(theta_star),
F_1 = -eta H(theta_star), F_2 = -(eta/2) grad^3 L, F_3 = -(eta/6) grad^4 L.
Terms are stored as sparse n x n^k maps, symmetrized over their Kronecker
input slots.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import models
from .errors import DegreeMismatchError, InputError


def symmetrize_slots(mat, k, n):
    """Average an n x n^k map over permutations of its k input slots."""
    if k < 2:
        return np.asarray(mat, dtype=float)
    import itertools

    T = np.asarray(mat, dtype=float).reshape((n,) + (n,) * k)
    acc = np.zeros_like(T)
    perms = list(itertools.permutations(range(1, k + 1)))
    for p in perms:
        acc += T.transpose((0,) + p)
    return (acc / len(perms)).reshape(n, n ** k)


def max_row_col_nnz(mat):
    m = mat.tocsr()
    rows = np.diff(m.indptr).max() if m.shape[0] else 0
    cols = np.diff(m.tocsc().indptr).max() if m.shape[1] else 0
    return int(max(rows, cols))


@dataclass
class PolyField:
    """Update field in shifted coordinates; immutable after construction."""

    n: int
    degree: int
    eta: float
    theta_star: np.ndarray
    terms: list  # terms[k]: csr matrix of shape (n, n**k)
    exact: bool = True  # False when the model's gradient degree exceeds `degree`

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float).ravel()
        if len(self.terms) != self.degree + 1:
            raise InputError("need one term per order 0..degree")
        fixed = []
        for k, t in enumerate(self.terms):
            t = sp.csr_matrix(t)
            if t.shape != (self.n, self.n ** k):
                raise InputError(
                    f"term {k} has shape {t.shape}, expected {(self.n, self.n ** k)}"
                )
            t.sum_duplicates()
            t.eliminate_zeros()
            fixed.append(t)
        self.terms = fixed

    def f0(self):
        return np.asarray(self.terms[0].todense()).ravel()

    def eval(self, theta):
        """Field value at an absolute point theta."""
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.n:
            raise InputError(f"point length {theta.size}, field dimension {self.n}")
        return self.eval_delta(theta - self.theta_star)

    def eval_delta(self, delta):
        delta = np.asarray(delta, dtype=float).ravel()
        out = np.zeros(self.n)
        v = np.ones(1)
        for k, term in enumerate(self.terms):
            if k > 0:
                v = np.kron(v, delta)
            out += term @ v
        return out

    def sparsity(self):
        """Max stored-nonzero count over any row or column of any term."""
        return max(max_row_col_nnz(t) for t in self.terms)

    def nnz(self):
        return int(sum(t.nnz for t in self.terms))

    def save_coo(self, path):
        """Write a text coordinate list: `k i j_1 .. j_k value` per line."""
        with open(path, "w") as f:
            f.write(f"# polyfield n={self.n} degree={self.degree} "
                    f"eta={self.eta!r} exact={int(self.exact)}\n")
            f.write("# theta_star "
                    + " ".join(repr(float(v)) for v in self.theta_star) + "\n")
            for k, term in enumerate(self.terms):
                coo = term.tocoo()
                for r, c, val in zip(coo.row, coo.col, coo.data):
                    multi = []
                    cc = int(c)
                    for _ in range(k):
                        multi.append(cc % self.n)
                        cc //= self.n
                    multi.reverse()
                    idx = " ".join(str(m) for m in multi)
                    f.write(f"{k} {r}{' ' + idx if idx else ''} "
                            f"{float(val)!r}\n")

    @classmethod
    def load_coo(cls, path):
        n = degree = None
        eta = 1.0
        exact = True
        theta_star = None
        entries = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    parts = line[1:].split()
                    if parts and parts[0] == "polyfield":
                        kv = dict(p.split("=") for p in parts[1:])
                        n, degree = int(kv["n"]), int(kv["degree"])
                        eta = float(kv["eta"])
                        exact = bool(int(kv["exact"]))
                    elif parts and parts[0] == "theta_star":
                        theta_star = np.array([float(v) for v in parts[1:]])
                    continue
                parts = line.split()
                k = int(parts[0])
                r = int(parts[1])
                multi = [int(m) for m in parts[2:2 + k]]
                val = float(parts[2 + k])
                col = 0
                for m in multi:
                    col = col * n + m
                entries.append((k, r, col, val))
        if n is None or theta_star is None:
            raise InputError("missing polyfield header")
        terms = []
        for k in range(degree + 1):
            rows = [(r, c, v) for (kk, r, c, v) in entries if kk == k]
            if rows:
                r, c, v = zip(*rows)
            else:
                r, c, v = [], [], []
            terms.append(sp.csr_matrix((v, (r, c)), shape=(n, n ** k)))
        return cls(n=n, degree=degree, eta=eta, theta_star=theta_star,
                   terms=terms, exact=exact)


def _restrict(theta_star, mask):
    if mask is None:
        return None, theta_star
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    return idx, theta_star[idx]


def _third_fourth_tensors(spec, data, theta_star, idx, degree, step):
    """Derivative tensors grad^3 L and grad^4 L (restricted to `idx`), via
    central finite differences of the exact Hessian. For models whose
    gradient degree is <= 3 the Hessian is at most quadratic in theta, so
    the differences are exact for any step; a wide stencil then keeps
    rounding error at machine level."""
    n_full = theta_star.size
    if idx is None:
        idx = np.arange(n_full)
    k = idx.size

    def hess_red(point):
        H = models.hessian(spec, point, data)
        return H[np.ix_(idx, idx)]

    T3 = None
    if degree >= 2:
        T3 = np.empty((k, k, k))
        for j, col in enumerate(idx):
            tp = theta_star.copy()
            tp[col] += step
            tm = theta_star.copy()
            tm[col] -= step
            T3[:, :, j] = (hess_red(tp) - hess_red(tm)) / (2.0 * step)
    T4 = None
    if degree >= 3:
        T4 = np.empty((k, k, k, k))
        H0 = hess_red(theta_star)
        for a, ca in enumerate(idx):
            for b_, cb in enumerate(idx[:a + 1]):
                if ca == cb:
                    tp = theta_star.copy()
                    tp[ca] += step
                    tm = theta_star.copy()
                    tm[ca] -= step
                    D = (hess_red(tp) - 2.0 * H0 + hess_red(tm)) / (step * step)
                else:
                    tpp = theta_star.copy(); tpp[ca] += step; tpp[cb] += step
                    tpm = theta_star.copy(); tpm[ca] += step; tpm[cb] -= step
                    tmp = theta_star.copy(); tmp[ca] -= step; tmp[cb] += step
                    tmm = theta_star.copy(); tmm[ca] -= step; tmm[cb] -= step
                    D = (hess_red(tpp) - hess_red(tpm) - hess_red(tmp) + hess_red(tmm)) \
                        / (4.0 * step * step)
                T4[:, :, a, b_] = D
                T4[:, :, b_, a] = D
    return T3, T4


def _analytic_tensors(spec, theta_star, degree):
    """Closed-form grad^3 / grad^4 for the analytic testbeds."""
    n = spec.n
    T3 = np.zeros((n, n, n)) if degree >= 2 else None
    T4 = np.zeros((n, n, n, n)) if degree >= 3 else None
    if spec.kind == "scalar_cubic":
        c1 = spec.coefficients[1]
        if T3 is not None:
            T3[0, 0, 0] = 6.0 * c1 * theta_star[0]
        if T4 is not None:
            T4[0, 0, 0, 0] = 6.0 * c1
    return T3, T4


def from_model(spec, data, theta_star, degree, eta, mode="exact", mask=None,
               fd_step=None):
    """Extract the update field of a model around theta_star.

    mode='exact' requires the model's gradient to be polynomial of degree
    <= `degree`; mode='taylor' accepts any model and flags the result as
    truncated when it is. mode='auto' picks exact when possible. With a
    mask, the field lives on the reduced coordinate space of unmasked
    entries (masked coordinates pinned at zero).
    """
    if degree not in (1, 2, 3):
        raise InputError(f"degree must be 1, 2 or 3, got {degree}")
    if eta <= 0:
        raise InputError("eta must be positive")
    theta_star = np.asarray(theta_star, dtype=float).ravel()
    if theta_star.size != spec.n:
        raise InputError(f"anchor length {theta_star.size} != model n={spec.n}")
    gd = spec.grad_degree()
    if mode == "auto":
        mode = "exact" if gd <= degree else "taylor"
    if mode not in ("exact", "taylor"):
        raise InputError(f"unknown extraction mode {mode!r}")
    if mode == "exact" and gd > degree:
        raise DegreeMismatchError(
            f"model gradient has degree {gd} > requested degree {degree}; "
            "request taylor mode explicitly"
        )
    idx, anchor_red = _restrict(theta_star, mask)
    n = anchor_red.size if idx is not None else spec.n

    g = models.grad(spec, theta_star, data)
    H = models.hessian(spec, theta_star, data)
    if idx is not None:
        g = g[idx]
        H = H[np.ix_(idx, idx)]

    if fd_step is None:
        fd_step = 0.05 if gd <= 3 else 1e-3

    if spec.kind in models.ANALYTIC_KINDS:
        T3, T4 = _analytic_tensors(spec, theta_star, degree)
        if idx is not None and T3 is not None:
            T3 = T3[np.ix_(idx, idx, idx)]
        if idx is not None and T4 is not None:
            T4 = T4[np.ix_(idx, idx, idx, idx)]
    else:
        T3, T4 = _third_fourth_tensors(spec, data, theta_star, idx, degree, fd_step)

    terms = [sp.csr_matrix((-eta * g).reshape(n, 1)), sp.csr_matrix(-eta * H)]
    if degree >= 2:
        F2 = symmetrize_slots((-0.5 * eta) * T3.reshape(n, n * n), 2, n)
        terms.append(sp.csr_matrix(F2))
    if degree >= 3:
        F3 = symmetrize_slots((-eta / 6.0) * T4.reshape(n, n ** 3), 3, n)
        terms.append(sp.csr_matrix(F3))
    return PolyField(n=n, degree=degree, eta=eta, theta_star=anchor_red,
                     terms=terms, exact=(gd <= degree))


@dataclass
class SparsifyResult:
    field: PolyField
    s: int  # max row/column nonzero count after thresholding
    dropped_mass: float  # l1 mass of dropped entries / total l1 mass


def sparsify(field, threshold):
    """Drop entries with |value| < threshold from every term."""
    if threshold < 0:
        raise InputError("threshold must be >= 0")
    total = kept = 0.0
    new_terms = []
    for term in field.terms:
        t = term.copy().tocsr()
        total += np.abs(t.data).sum()
        t.data[np.abs(t.data) < threshold] = 0.0
        t.eliminate_zeros()
        kept += np.abs(t.data).sum()
        new_terms.append(t)
    new_field = PolyField(n=field.n, degree=field.degree, eta=field.eta,
                          theta_star=field.theta_star.copy(), terms=new_terms,
                          exact=field.exact)
    dropped = 0.0 if total == 0 else (total - kept) / total
    return SparsifyResult(field=new_field, s=new_field.sparsity(), dropped_mass=dropped)
