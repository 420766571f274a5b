"""Library of second-order elliptic model problems.

All coefficient and data callables take points of shape ``(..., 2)`` and
return arrays of shape ``(...)``, ``(..., 2)`` or ``(..., 2, 2)``.

The divergence-form problem is ``-div(A grad u) + b.grad u + c u = f1 + div(A f2)``
read in the weak sense, with flux ``sigma = A (f2 - grad u)``. The
physical-form problem ``-div(A grad u + b u) + c u = f`` uses the total flux
``-A grad u - b u``; its data live in the ``*_physical`` fields.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .mesh import Mesh, generate_lshape, generate_unit_square

__all__ = ["EllipticProblem", "builtin", "BUILTINS", "strong_residual_check"]

Field = Callable[[np.ndarray], np.ndarray]


def _xy(p):
    p = np.asarray(p, dtype=float)
    return p[..., 0], p[..., 1]


def _const_scalar(value: float) -> Field:
    return lambda p: np.full(np.shape(p)[:-1], float(value))


def _const_vector(value) -> Field:
    v = np.asarray(value, dtype=float)
    return lambda p: np.broadcast_to(v, np.shape(p)[:-1] + (2,)).copy()


def _const_matrix(value) -> Field:
    m = np.asarray(value, dtype=float)
    return lambda p: np.broadcast_to(m, np.shape(p)[:-1] + (2, 2)).copy()


_ZERO_VEC = _const_vector((0.0, 0.0))
_ZERO = _const_scalar(0.0)
_IDENTITY = _const_matrix(np.eye(2))


@dataclass(frozen=True)
class EllipticProblem:
    name: str
    domain: str  # "square" or "lshape"
    A: Field
    b: Field
    c: Field
    f1: Field
    f2: Optional[Field] = None
    dirichlet: str | tuple[str, ...] = "all"
    coarse_n: int = 1
    exact_u: Optional[Field] = None
    exact_grad_u: Optional[Field] = None
    exact_sigma: Optional[Field] = None
    exact_div_sigma: Optional[Field] = None
    f_physical: Optional[Field] = None
    exact_sigma_physical: Optional[Field] = None
    exact_div_sigma_physical: Optional[Field] = None
    dirichlet_data: Optional[Field] = None
    lam0: float = 1.0
    lam1: float = 1.0
    b_max: float = 0.0
    c_max: float = 0.0

    # ------------------------------------------------------------- meshes
    def make_mesh(self, level: int) -> Mesh:
        """Structured mesh with ``coarse_n * 2**level`` subdivisions per unit length."""
        n = self.coarse_n * 2 ** int(level)
        if self.domain == "square":
            return generate_unit_square(n, self.dirichlet)
        if self.domain == "lshape":
            return generate_lshape(n)
        raise ValueError(f"unknown domain {self.domain!r}")

    def sample_points(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if self.domain == "square":
            return rng.random((count, 2))
        pts = np.empty((0, 2))
        while len(pts) < count:
            cand = rng.uniform(-1.0, 1.0, size=(2 * count, 2))
            keep = ~((cand[:, 0] > 0) & (cand[:, 1] < 0))
            pts = np.vstack([pts, cand[keep]])
        return pts[:count]

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None and self.exact_sigma is not None

    @property
    def is_pure_dirichlet(self) -> bool:
        return self.domain == "lshape" or self.dirichlet == "all" or set(self.dirichlet) == {
            "left", "right", "bottom", "top"
        }

    # ------------------------------------------------------- formulations
    def data(self, formulation: str) -> tuple[Field, Optional[Field]]:
        """Right-hand sides ``(f, f2)`` of the first-order system for ``formulation``."""
        formulation = formulation.upper()
        if formulation == "M":
            return self.f1, self.f2
        if formulation == "L":
            if self.f2 is not None:
                raise ValueError(f"problem {self.name!r} has an H^-1 right-hand side; use formulation M")
            return self.f1, None
        if formulation == "J":
            if self.f_physical is None:
                raise ValueError(f"problem {self.name!r} defines no physical-form data for formulation J")
            return self.f_physical, None
        raise ValueError(f"unknown formulation {formulation!r}")

    def exact(self, formulation: str) -> tuple[Field, Field, Field, Field]:
        """Exact ``(u, grad u, sigma, div sigma)`` matching ``formulation``."""
        if not self.has_exact:
            raise ValueError(f"problem {self.name!r} has no exact solution")
        if formulation.upper() == "J":
            if self.exact_sigma_physical is None:
                raise ValueError(f"problem {self.name!r} has no exact total flux")
            return self.exact_u, self.exact_grad_u, self.exact_sigma_physical, self.exact_div_sigma_physical
        return self.exact_u, self.exact_grad_u, self.exact_sigma, self.exact_div_sigma

    def X(self, v: np.ndarray, grad_v: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """``b . grad v + c v`` at ``pts``."""
        return np.einsum("...x,...x->...", self.b(pts), grad_v) + self.c(pts) * v

    def check_coefficients(self, count: int = 1000, seed: int = 0) -> tuple[float, float]:
        """Sample ``y^T A y`` over unit ``y``; returns the observed (min, max)."""
        rng = np.random.default_rng(seed)
        pts = self.sample_points(count, rng)
        theta = rng.uniform(0, 2 * np.pi, count)
        y = np.column_stack([np.cos(theta), np.sin(theta)])
        q = np.einsum("nx,nxy,ny->n", y, self.A(pts), y)
        return float(q.min()), float(q.max())


# ----------------------------------------------------------- construction
def _manufactured(
    name: str,
    u: Field,
    grad: Field,
    hess: Field,
    A: Field,
    div_A: Field,
    b: Field,
    c: Field,
    div_b: Field = _ZERO,
    **kwargs,
) -> EllipticProblem:
    """Problem whose data are derived by substitution of a chosen ``u``.

    ``div_A(p)[i]`` is ``sum_j d_j A_ij``.
    """

    def div_flux(p):  # div(A grad u)
        return np.einsum("...x,...x->...", div_A(p), grad(p)) + np.einsum("...xy,...xy->...", A(p), hess(p))

    def bgrad(p):
        return np.einsum("...x,...x->...", b(p), grad(p))

    def sigma(p):
        return -np.einsum("...xy,...y->...x", A(p), grad(p))

    def f1(p):
        return -div_flux(p) + bgrad(p) + c(p) * u(p)

    def f_phys(p):
        return -div_flux(p) - bgrad(p) - div_b(p) * u(p) + c(p) * u(p)

    def sigma_phys(p):
        return sigma(p) - b(p) * u(p)[..., None]

    return EllipticProblem(
        name=name,
        A=A,
        b=b,
        c=c,
        f1=f1,
        exact_u=u,
        exact_grad_u=grad,
        exact_sigma=sigma,
        exact_div_sigma=lambda p: -div_flux(p),
        f_physical=f_phys,
        exact_sigma_physical=sigma_phys,
        exact_div_sigma_physical=lambda p: f_phys(p) - c(p) * u(p),
        **kwargs,
    )


def _sine_mode(kx: int = 1, ky: int = 1):
    def u(p):
        x, y = _xy(p)
        return np.sin(kx * np.pi * x) * np.sin(ky * np.pi * y)

    def grad(p):
        x, y = _xy(p)
        sx, cx = np.sin(kx * np.pi * x), np.cos(kx * np.pi * x)
        sy, cy = np.sin(ky * np.pi * y), np.cos(ky * np.pi * y)
        return np.stack([kx * np.pi * cx * sy, ky * np.pi * sx * cy], axis=-1)

    def hess(p):
        x, y = _xy(p)
        sx, cx = np.sin(kx * np.pi * x), np.cos(kx * np.pi * x)
        sy, cy = np.sin(ky * np.pi * y), np.cos(ky * np.pi * y)
        hxy = kx * ky * np.pi**2 * cx * cy
        return np.stack(
            [
                np.stack([-((kx * np.pi) ** 2) * sx * sy, hxy], axis=-1),
                np.stack([hxy, -((ky * np.pi) ** 2) * sx * sy], axis=-1),
            ],
            axis=-2,
        )

    return u, grad, hess


def _drop_exact_unless_dirichlet(problem: EllipticProblem) -> EllipticProblem:
    # the manufactured solutions only satisfy homogeneous Dirichlet conditions
    if problem.is_pure_dirichlet:
        return problem
    return dataclasses.replace(
        problem,
        exact_u=None,
        exact_grad_u=None,
        exact_sigma=None,
        exact_div_sigma=None,
        exact_sigma_physical=None,
        exact_div_sigma_physical=None,
    )


def poisson_sine(dirichlet="all") -> EllipticProblem:
    u, grad, hess = _sine_mode()
    p = _manufactured(
        "poisson_sine", u, grad, hess, _IDENTITY, _ZERO_VEC, _ZERO_VEC, _ZERO,
        domain="square", dirichlet=dirichlet,
    )
    return _drop_exact_unless_dirichlet(p)


def convection_reaction(bx: float = 1.0, by: float = -1.0, c: float | None = None, dirichlet="all") -> EllipticProblem:
    """Variable diffusion ``diag(1+x^2, 1+y^2)``, constant convection, reaction ``1+xy``."""
    u, grad, hess = _sine_mode()

    def A(p):
        x, y = _xy(p)
        out = np.zeros(np.shape(x) + (2, 2))
        out[..., 0, 0] = 1.0 + x**2
        out[..., 1, 1] = 1.0 + y**2
        return out

    def div_A(p):
        x, y = _xy(p)
        return np.stack([2.0 * x, 2.0 * y], axis=-1)

    if c is None:
        def reaction(p):
            x, y = _xy(p)
            return 1.0 + x * y
        c_max = 2.0
    else:
        reaction = _const_scalar(c)
        c_max = abs(float(c))
    p = _manufactured(
        "convection_reaction", u, grad, hess, A, div_A, _const_vector((bx, by)), reaction,
        domain="square", dirichlet=dirichlet, lam0=1.0, lam1=2.0,
        b_max=float(np.hypot(bx, by)), c_max=c_max,
    )
    return _drop_exact_unless_dirichlet(p)


def helmholtz_indefinite(c: float = -30.0, dirichlet="all") -> EllipticProblem:
    """Real Helmholtz problem; ``c=-30`` lies between the first two Dirichlet eigenvalues."""
    u, grad, hess = _sine_mode()
    p = _manufactured(
        "helmholtz_indefinite", u, grad, hess, _IDENTITY, _ZERO_VEC, _ZERO_VEC, _const_scalar(c),
        domain="square", dirichlet=dirichlet, c_max=abs(float(c)),
    )
    return _drop_exact_unless_dirichlet(p)


def lshape_singular() -> EllipticProblem:
    """Harmonic ``r^(2/3) sin(2 theta / 3)`` on the L-shape, nonzero boundary trace."""
    alpha = 2.0 / 3.0

    def polar(p):
        x, y = _xy(p)
        return np.hypot(x, y), np.mod(np.arctan2(y, x), 2 * np.pi)

    def u(p):
        r, t = polar(p)
        return r**alpha * np.sin(alpha * t)

    def grad(p):
        r, t = polar(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r > 0, alpha * r ** (alpha - 1), 0.0)
        return np.stack([s * np.sin((alpha - 1) * t), s * np.cos((alpha - 1) * t)], axis=-1)

    return EllipticProblem(
        name="lshape_singular",
        domain="lshape",
        A=_IDENTITY,
        b=_ZERO_VEC,
        c=_ZERO,
        f1=_ZERO,
        exact_u=u,
        exact_grad_u=grad,
        exact_sigma=lambda p: -grad(p),
        exact_div_sigma=_ZERO,
        f_physical=_ZERO,
        exact_sigma_physical=lambda p: -grad(p),
        exact_div_sigma_physical=_ZERO,
        dirichlet_data=u,
    )


def _center_hat(h: float = 0.5):
    """Hat function of the vertex (1/2, 1/2) on the structured mesh of spacing ``h``."""

    def parts(p):
        x, y = _xy(p)
        xi, eta = (x - 0.5) / h, (y - 0.5) / h
        cand = np.stack([np.abs(xi), np.abs(eta), np.abs(xi - eta)], axis=-1)
        return xi, eta, cand

    def v(p):
        _, _, cand = parts(p)
        return np.maximum(0.0, 1.0 - cand.max(axis=-1))

    def grad(p):
        xi, eta, cand = parts(p)
        k = cand.argmax(axis=-1)
        gx = np.select([k == 0, k == 1, k == 2], [-np.sign(xi), 0.0, -np.sign(xi - eta)])
        gy = np.select([k == 0, k == 1, k == 2], [0.0, -np.sign(eta), np.sign(xi - eta)])
        inside = cand.max(axis=-1) < 1.0
        return np.stack([gx * inside, gy * inside], axis=-1) / h

    return v, grad


def hminus1_recovery(c: float = 1.0) -> EllipticProblem:
    """``f2 = grad v_h`` for a P1 hat ``v_h``; the exact pair ``(0, v_h)`` is discrete."""
    v, grad = _center_hat(0.5)
    return EllipticProblem(
        name="hminus1_recovery",
        domain="square",
        A=_IDENTITY,
        b=_ZERO_VEC,
        c=_const_scalar(c),
        f1=lambda p: c * v(p),
        f2=grad,
        coarse_n=2,
        exact_u=v,
        exact_grad_u=grad,
        exact_sigma=_ZERO_VEC,
        exact_div_sigma=_ZERO,
        c_max=abs(float(c)),
    )


def hminus1_manufactured(c: float = 2.0) -> EllipticProblem:
    """Smooth chosen ``(sigma*, u*)`` with ``f2 = A^-1 sigma* + grad u*``."""
    A_mat = np.array([[2.0, 0.5], [0.5, 1.0]])
    A_inv = np.linalg.inv(A_mat)
    b_vec = np.array([1.0, 0.5])
    u, grad, _ = _sine_mode(1, 2)

    def sigma(p):
        x, y = _xy(p)
        return np.stack([y * np.cos(np.pi * x), x**2 + y], axis=-1)

    def div_sigma(p):
        x, y = _xy(p)
        return -np.pi * y * np.sin(np.pi * x) + 1.0

    def f2(p):
        return sigma(p) @ A_inv.T + grad(p)

    def f1(p):
        return div_sigma(p) + grad(p) @ b_vec + c * u(p)

    lam = np.linalg.eigvalsh(A_mat)
    return EllipticProblem(
        name="hminus1_manufactured",
        domain="square",
        A=_const_matrix(A_mat),
        b=_const_vector(b_vec),
        c=_const_scalar(c),
        f1=f1,
        f2=f2,
        exact_u=u,
        exact_grad_u=grad,
        exact_sigma=sigma,
        exact_div_sigma=div_sigma,
        lam0=float(lam[0]),
        lam1=float(lam[1]),
        b_max=float(np.linalg.norm(b_vec)),
        c_max=abs(float(c)),
    )


BUILTINS: dict[str, Callable[..., EllipticProblem]] = {
    "poisson_sine": poisson_sine,
    "convection_reaction": convection_reaction,
    "helmholtz_indefinite": helmholtz_indefinite,
    "lshape_singular": lshape_singular,
    "hminus1_recovery": hminus1_recovery,
    "hminus1_manufactured": hminus1_manufactured,
}


def builtin(name: str, **overrides) -> EllipticProblem:
    """Look up a builtin problem, optionally overriding its constants."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choices: {', '.join(BUILTINS)}") from None
    try:
        return factory(**overrides)
    except TypeError as exc:
        raise ValueError(f"invalid overrides for problem {name!r}: {exc}") from None


def strong_residual_check(problem: EllipticProblem, n_samples: int = 200, seed: int = 0) -> float:
    """Max pointwise residual of the first-order system at the exact solution."""
    if not problem.has_exact:
        raise ValueError(f"problem {problem.name!r} has no exact fields")
    rng = np.random.default_rng(seed)
    p = problem.sample_points(n_samples, rng)
    A = problem.A(p)
    f2 = problem.f2(p) if problem.f2 is not None else np.zeros_like(p)
    grad = problem.exact_grad_u(p)
    first = problem.exact_sigma(p) + np.einsum("nxy,ny->nx", A, grad - f2)
    second = problem.exact_div_sigma(p) + problem.X(problem.exact_u(p), grad, p) - problem.f1(p)
    return float(max(np.abs(first).max(), np.abs(second).max()))
