"""Spherical harmonics on S^{n-1} for n in {3, 4, 5}.

The basis is built from monomials restricted to the sphere and orthonormalized
degree by degree under a product Gauss-Jacobi quadrature, so every basis
function is an explicit polynomial and its covariant derivatives are exact.
Also hosts the Hessian-trace operators (H, Q, P1, P2) used to check degree
bounds of nonlinear expressions.
"""

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import roots_jacobi

from .errors import ArityError, PrecisionError, ShapeError, UnsupportedDimensionError
from .validation import check_int

SUPPORTED_DIMENSIONS = (3, 4, 5)
LINEAR_TOL = 1e-10
NONLINEAR_TOL = 1e-8


def sphere_area(n):
    """Surface area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def harmonic_dimension(n, d):
    """Dimension of the degree-d spherical harmonics on S^{n-1}."""
    if d < 0:
        return 0
    total = math.comb(d + n - 1, n - 1)
    if d >= 2:
        total -= math.comb(d - 2 + n - 1, n - 1)
    return total


def eigenvalue(n, d):
    return d * (d + n - 2)


@dataclass(frozen=True)
class SphereQuadrature:
    n: int
    nodes: np.ndarray
    weights: np.ndarray
    exact_degree: int

    @property
    def size(self):
        return self.weights.size


def _sphere_rule(n, degree):
    if n == 2:
        count = degree + 1
        angles = 2.0 * np.pi * np.arange(count) / count
        nodes = np.column_stack([np.cos(angles), np.sin(angles)])
        return nodes, np.full(count, 2.0 * np.pi / count)
    sub_nodes, sub_weights = _sphere_rule(n - 1, degree)
    alpha = (n - 3) / 2.0
    count = degree // 2 + 1
    u, wu = roots_jacobi(count, alpha, alpha)
    radius = np.sqrt(1.0 - u**2)
    nodes = np.concatenate(
        [np.column_stack([np.full(len(sub_weights), ui), ri * sub_nodes]) for ui, ri in zip(u, radius)]
    )
    weights = np.concatenate([wi * sub_weights for wi in wu])
    return nodes, weights


def sphere_quadrature(n, exact_degree):
    """Product rule on S^{n-1} integrating polynomials of degree <= exact_degree exactly."""
    n = check_int(n, "n", low=2)
    exact_degree = check_int(exact_degree, "exact_degree", low=0)
    nodes, weights = _sphere_rule(n, exact_degree)
    return SphereQuadrature(n, nodes, weights, exact_degree)


def _monomial_exponents(n, max_degree):
    rows = []
    for d in range(max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            e = [0] * n
            for c in combo:
                e[c] += 1
            rows.append(e)
    return np.array(rows, dtype=int)


def _power_table(points, max_power):
    q, n = points.shape
    table = np.ones((q, n, max_power + 1))
    for e in range(1, max_power + 1):
        table[:, :, e] = table[:, :, e - 1] * points
    return table


def _monomials(table, exps, shift=None):
    """Evaluate d^shift x^exps at the tabulated points, derivative coefficient included."""
    exps = exps.copy()
    coef = np.ones(len(exps))
    if shift is not None:
        for k, s in enumerate(shift):
            for _ in range(s):
                coef *= exps[:, k]
                exps[:, k] -= 1
    valid = np.all(exps >= 0, axis=1)
    exps = np.where(exps < 0, 0, exps)
    n = exps.shape[1]
    out = np.ones((table.shape[0], len(exps)))
    for k in range(n):
        out *= table[:, k, :][:, exps[:, k]]
    return out * (coef * valid)


def _tangent_frames(points):
    """Orthonormal frames of the tangent spaces, via a Householder reflection per point."""
    q, n = points.shape
    sign = np.where(points[:, 0] >= 0, 1.0, -1.0)
    v = points.copy()
    v[:, 0] += sign
    vv = np.einsum("qi,qi->q", v, v)
    eye = np.eye(n)
    reflect = eye[None] - 2.0 * v[:, :, None] * v[:, None, :] / vv[:, None, None]
    return reflect[:, :, 1:]


class HarmonicBasis:
    """Orthonormal real spherical harmonics on S^{n-1} through max_degree.

    Entries are ordered by degree; X_0 is the constant |S^{n-1}|^{-1/2} and
    X_1..X_n are proportional to the coordinates x_1..x_n.
    """

    def __init__(self, n, max_degree, quadrature, exponents, coefficients, degrees):
        self.n = n
        self.max_degree = max_degree
        self.quadrature = quadrature
        self.exponents = exponents
        self.coefficients = coefficients
        self.degrees = degrees
        self.eigenvalues = np.array([eigenvalue(n, d) for d in degrees], dtype=float)

    @property
    def size(self):
        return len(self.degrees)

    @property
    def sphere_dim(self):
        return self.n - 1

    @property
    def nodes(self):
        return self.quadrature.nodes

    @property
    def weights(self):
        return self.quadrature.weights

    @property
    def exact_degree(self):
        return self.quadrature.exact_degree

    def index_range(self, degree):
        idx = np.flatnonzero(self.degrees == degree)
        return range(idx[0], idx[-1] + 1) if idx.size else range(0)

    def degree_mask(self, max_degree):
        return self.degrees <= max_degree

    def evaluate(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.n:
            raise ShapeError(f"points must have {self.n} columns")
        table = _power_table(points, self.max_degree)
        return _monomials(table, self.exponents) @ self.coefficients.T

    @cached_property
    def _table(self):
        return _power_table(self.nodes, self.max_degree)

    @cached_property
    def values(self):
        return _monomials(self._table, self.exponents) @ self.coefficients.T

    @cached_property
    def frames(self):
        return _tangent_frames(self.nodes)

    @cached_property
    def _ambient_gradient(self):
        grads = []
        for k in range(self.n):
            shift = np.zeros(self.n, dtype=int)
            shift[k] = 1
            grads.append(_monomials(self._table, self.exponents, shift) @ self.coefficients.T)
        return np.stack(grads, axis=-1)

    @cached_property
    def gradients(self):
        """Covariant gradients in the node frames, shape (Q, M, n-1)."""
        return np.einsum("qik,qka->qia", self._ambient_gradient, self.frames)

    @cached_property
    def hessians(self):
        """Covariant Hessians in the node frames, shape (Q, M, n-1, n-1)."""
        e = self.frames
        m = self.sphere_dim
        out = np.zeros((len(self.weights), self.size, m, m))
        for k in range(self.n):
            for l in range(self.n):
                shift = np.zeros(self.n, dtype=int)
                shift[k] += 1
                shift[l] += 1
                d2 = _monomials(self._table, self.exponents, shift) @ self.coefficients.T
                out += d2[:, :, None, None] * (e[:, k, :, None] * e[:, l, None, :])[:, None]
        radial = np.einsum("qik,qk->qi", self._ambient_gradient, self.nodes)
        out -= radial[:, :, None, None] * np.eye(m)[None, None]
        return out

    def gram(self):
        v = self.values
        return v.T @ (self.weights[:, None] * v)

    def describe(self):
        return [
            {"index": i, "degree": int(d), "eigenvalue": int(self.eigenvalues[i])}
            for i, d in enumerate(self.degrees)
        ]


def build_basis(n, max_degree, exact_degree=None):
    """Orthonormal harmonic basis of S^{n-1} through max_degree.

    The quadrature is exact through 2*max_degree + 4 unless a larger
    exact_degree is requested.
    """
    n = check_int(n, "n")
    if n not in SUPPORTED_DIMENSIONS:
        raise UnsupportedDimensionError(f"explicit bases exist for n in {SUPPORTED_DIMENSIONS}, got {n}")
    max_degree = check_int(max_degree, "max_degree", low=0)
    if exact_degree is None:
        exact_degree = 2 * max_degree + 4
    if exact_degree < 2 * max_degree:
        raise PrecisionError("quadrature must be exact through twice the basis degree")
    quad = sphere_quadrature(n, exact_degree)
    exps = _monomial_exponents(n, max_degree)
    table = _power_table(quad.nodes, max_degree)
    mono = _monomials(table, exps)
    w = quad.weights

    vals, coefs, degrees = [], [], []
    for d in range(max_degree + 1):
        accepted = 0
        for a in np.flatnonzero(exps.sum(axis=1) == d):
            v = mono[:, a].copy()
            c = np.zeros(len(exps))
            c[a] = 1.0
            norm0 = math.sqrt(np.sum(w * v * v))
            for _ in range(2):
                if vals:
                    B = np.array(vals).T
                    proj = B.T @ (w * v)
                    v -= B @ proj
                    c -= np.array(coefs).T @ proj
            norm = math.sqrt(np.sum(w * v * v))
            if norm > 1e-7 * norm0:
                vals.append(v / norm)
                coefs.append(c / norm)
                degrees.append(d)
                accepted += 1
        if accepted != harmonic_dimension(n, d):
            raise PrecisionError(f"degree {d}: found {accepted} harmonics, expected {harmonic_dimension(n, d)}")
    basis = HarmonicBasis(n, max_degree, quad, exps, np.array(coefs), np.array(degrees))
    basis.__dict__["values"] = np.array(vals).T
    return basis


@dataclass(frozen=True)
class HarmonicCoefficients:
    """Mode coefficients c_i(t_j); a single row when the field is t-independent."""

    basis: HarmonicBasis
    t_grid: np.ndarray
    coeffs: np.ndarray
    truncation_error: np.ndarray = None

    def reconstruct(self):
        return self.coeffs @ self.basis.values.T

    def degree_content(self):
        """L2 norm of the content in each degree, per row."""
        out = np.zeros(self.coeffs.shape[:-1] + (self.basis.max_degree + 1,))
        for d in range(self.basis.max_degree + 1):
            sl = self.basis.degrees == d
            out[..., d] = np.sqrt(np.sum(self.coeffs[..., sl] ** 2, axis=-1))
        return out


def _values_of(field, basis):
    if isinstance(field, CylinderField):
        if field.basis is not basis:
            raise ShapeError("field lives on a different basis")
        return field.t, field.values()
    values = np.asarray(field, dtype=float)
    if values.shape[-1] != basis.weights.size:
        raise ShapeError(f"field has {values.shape[-1]} node values, quadrature has {basis.weights.size}")
    return None, values


def project(field, basis):
    """L2 projection onto the basis; truncation error is the norm of the remainder."""
    t, values = _values_of(field, basis)
    coeffs = values @ (basis.weights[:, None] * basis.values)
    rest = values - coeffs @ basis.values.T
    err = np.sqrt(np.sum(basis.weights * rest**2, axis=-1))
    grid = np.zeros(1) if t is None else t
    return HarmonicCoefficients(basis, grid, coeffs, err)


def decompose_product(i, j, basis):
    """Coefficients of X_i X_j, which lives in degrees 0..d_i+d_j."""
    top = int(basis.degrees[i] + basis.degrees[j])
    if top > basis.max_degree or 2 * top > basis.exact_degree:
        raise PrecisionError(f"product degree {top} exceeds what the basis/quadrature resolves")
    values = basis.values[:, i] * basis.values[:, j]
    coeffs = project(values, basis)
    recon = coeffs.coeffs @ basis.values.T
    if np.max(np.abs(recon - values)) > NONLINEAR_TOL:
        raise PrecisionError("product not reproduced by its projection")
    return coeffs


@dataclass(frozen=True)
class CylinderField:
    """A function on [t grid] x S^{n-1} stored by harmonic coefficients.

    coeffs has shape (len(t), M); optional t-derivatives of the coefficients
    make first and second t-derivatives available without differencing.
    """

    t: np.ndarray
    basis: HarmonicBasis
    coeffs: np.ndarray
    coeffs_t: np.ndarray = None
    coeffs_tt: np.ndarray = None

    def values(self):
        return self.coeffs @ self.basis.values.T

    def values_t(self):
        return self.coeffs_t @ self.basis.values.T

    def values_tt(self):
        return self.coeffs_tt @ self.basis.values.T

    def sphere_average(self):
        """Average over S^{n-1}: only the constant mode contributes."""
        x0 = 1.0 / math.sqrt(sphere_area(self.basis.n))
        return self.coeffs[:, 0] * x0

    def sup_theta(self):
        return np.max(np.abs(self.values()), axis=1)

    def jet(self, j):
        """SphereJet at the j-th time sample."""
        ct = None if self.coeffs_t is None else self.coeffs_t[j]
        ctt = None if self.coeffs_tt is None else self.coeffs_tt[j]
        return SphereJet.from_coefficients(self.basis, self.coeffs[j], ct, ctt)


@dataclass(frozen=True)
class SphereJet:
    """Values and covariant theta-derivatives at the quadrature nodes.

    dt, dt_grad and dtt carry phi_t, grad(phi_t) and phi_tt when known.
    """

    values: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    dt: np.ndarray = None
    dt_grad: np.ndarray = None
    dtt: np.ndarray = None

    @classmethod
    def from_coefficients(cls, basis, c, c_t=None, c_tt=None):
        c = np.asarray(c, dtype=float)
        values = basis.values @ c
        grad = np.einsum("qia,i->qa", basis.gradients, c)
        hess = np.einsum("qiab,i->qab", basis.hessians, c)
        dt = dt_grad = dtt = None
        if c_t is not None:
            dt = basis.values @ c_t
            dt_grad = np.einsum("qia,i->qa", basis.gradients, c_t)
        if c_tt is not None:
            dtt = basis.values @ c_tt
        return cls(values, grad, hess, dt, dt_grad, dtt)

    @classmethod
    def from_values(cls, basis, values, dt_values=None):
        """Spectral jets of a function known only at the nodes.

        The function must be a polynomial of degree <= basis.max_degree;
        otherwise the projection cannot reproduce it and PrecisionError is raised.
        """
        c = _exact_coefficients(basis, values)
        c_t = None if dt_values is None else _exact_coefficients(basis, dt_values)
        return cls.from_coefficients(basis, c, c_t)

    def is_symmetric(self, tol=1e-9):
        return bool(np.max(np.abs(self.hess - np.swapaxes(self.hess, -1, -2))) <= tol)


def _exact_coefficients(basis, values):
    values = np.asarray(values, dtype=float)
    c = basis.values.T @ (basis.weights * values)
    scale = max(1.0, float(np.max(np.abs(values))))
    if np.max(np.abs(basis.values @ c - values)) > NONLINEAR_TOL * scale:
        raise PrecisionError("function not resolved by the basis; raise max_degree")
    return c


def _chain(hessians, left, right):
    """left^T H_1 ... H_r right at every node."""
    vec = right
    for h in reversed(hessians):
        vec = np.einsum("qab,qb->qa", h, vec)
    return np.einsum("qa,qa->q", left, vec)


def _trace_chain(hessians):
    prod = hessians[0]
    for h in hessians[1:]:
        prod = np.einsum("qab,qbc->qac", prod, h)
    return np.einsum("qaa->q", prod)


def hessian_traces(jets, kind, sphere_dim=None):
    """Permutation-symmetrized Hessian traces.

    H: sum over permutations of tr(Hess phi^1 ... Hess phi^k); H with no jets is
    the constant sphere_dim. Q, P1, P2 contract the Hessian chain against two
    gradients, with P1 replacing the last gradient by grad(phi_t) and P2 both.
    """
    k = len(jets)
    if kind == "H":
        if k == 0:
            if sphere_dim is None:
                raise ArityError("H with no jets needs sphere_dim")
            return float(sphere_dim)
        total = 0.0
        for perm in itertools.permutations(range(k)):
            total = total + _trace_chain([jets[p].hess for p in perm])
        return total
    if kind not in ("Q", "P1", "P2"):
        raise ArityError(f"unknown kind {kind!r}")
    if k < 2:
        raise ArityError(f"{kind} needs at least two jets")
    total = 0.0
    for perm in itertools.permutations(range(k)):
        hs = [jets[p].hess for p in perm[: k - 2]]
        a, b = jets[perm[k - 2]], jets[perm[k - 1]]
        left = a.dt_grad if kind == "P2" else a.grad
        right = b.grad if kind == "Q" else b.dt_grad
        total = total + _chain(hs, left, right)
    return total


def verify_degree_bound(result, basis, bound):
    """Check that a node-sampled function has no content above degree `bound`.

    Returns a dict with the relative spill; passes when spill < 1e-8.
    """
    bound = check_int(bound, "bound", low=0)
    if bound > basis.max_degree or 2 * bound > basis.exact_degree:
        raise PrecisionError(f"bound {bound} exceeds what the basis/quadrature resolves")
    values = np.asarray(result, dtype=float) * np.ones(basis.weights.size)
    mask = basis.degrees <= bound
    c = basis.values[:, mask].T @ (basis.weights * values)
    recon = basis.values[:, mask] @ c
    scale = float(np.max(np.abs(values)))
    spill = 0.0 if scale == 0 else float(np.max(np.abs(values - recon)) / scale)
    return {"bound": bound, "spill": spill, "passed": spill < NONLINEAR_TOL}


def gradient_pairing(a, b):
    return np.einsum("qa,qa->q", a.grad, b.grad)


def pairing_constant(k, l):
    """Constant in front of sum_tau Q_{l+1} Q_{k-l-1} in the Q_k recursion.

    Counting the orderings absorbed by the two symmetrized factors gives
    1 / ((l+1)! (k-l-1)!); for k = 4 this is 1/4.
    """
    return 1.0 / (math.factorial(l + 1) * math.factorial(k - l - 1))


def _qk_terms(jets, basis):
    k = len(jets)
    idx = range(k)
    lhs = (k - 3) * hessian_traces(jets, "Q")

    first = 0.0
    third = 0.0
    for p, q in itertools.permutations(idx, 2):
        rest = [jets[r] for r in idx if r not in (p, q)]
        pair = gradient_pairing(jets[p], jets[q])
        pair_jet = SphereJet.from_values(basis, pair)
        first = first + hessian_traces([pair_jet] + rest, "Q")
        if len(rest) >= 2:
            third = third + pair * hessian_traces(rest, "Q")
        else:
            third = third + pair * 0.0

    second = 0.0
    for q in idx:
        rest = [jets[r] for r in idx if r != q]
        inner = SphereJet.from_values(basis, hessian_traces(rest, "Q"))
        second = second + gradient_pairing(inner, jets[q])

    fourth = 0.0
    for l in range(1, k - 2):
        acc = 0.0
        for perm in itertools.permutations(idx):
            a = hessian_traces([jets[p] for p in perm[: l + 1]], "Q")
            b = hessian_traces([jets[p] for p in perm[l + 1 :]], "Q")
            acc = acc + a * b
        fourth = fourth + pairing_constant(k, l) * acc
    return lhs, first, second, (k - 3) * third, fourth


def qk_recursion_residual(jets, basis, literal=False):
    """Max |(k-3)Q_k - RHS| of the recursion expressing Q_k through lower Q_l.

    The pair-function sum enters with weight 1/2; literal=True uses weight 1,
    which does not balance (the k = 3 case already needs the 1/2 for the
    first two sums to agree). Composite inner functions are differentiated
    spectrally, so the basis must resolve their degrees.
    """
    if len(jets) < 4:
        raise ArityError("the Q_k recursion is stated for k >= 4")
    lhs, first, second, third, fourth = _qk_terms(jets, basis)
    weight = 1.0 if literal else 0.5
    rhs = weight * first - second - third + fourth
    return float(np.max(np.abs(lhs - rhs)))


def pairing_term_direct(jets):
    """The pairing contribution of the recursion from its index contraction."""
    k = len(jets)
    total = 0.0
    for l in range(1, k - 2):
        for perm in itertools.permutations(range(k)):
            j = [jets[p] for p in perm]
            left = _chain([x.hess for x in j[: l - 1]], j[k - 2].grad, j[k - 1].grad)
            right = _chain([x.hess for x in j[l : k - 3]], j[l - 1].grad, j[k - 3].grad)
            total = total + left * right
    return total


def random_polynomial_coefficients(basis, degree, rng, scale=1.0):
    """Random element of S_degree (t-independent part) as basis coefficients."""
    c = np.zeros(basis.size)
    mask = basis.degrees <= degree
    c[mask] = scale * rng.standard_normal(int(mask.sum()))
    return c
