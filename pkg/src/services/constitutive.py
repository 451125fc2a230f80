"""
Energy potentials on minors: built-in families and sampled hypothesis checks.

Potentials act on flat minors arrays of shape (..., D) and return values (...),
gradients (..., D) and Hessians (..., D, D).
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.stats import qmc

from src.services import eos
from src.services.errors import ModelParameterError, UnknownModelError
from src.services.minors import as_flat, minors_size, phi
from src.services.newton import NewtonResult, damped_newton

logger = logging.getLogger(__name__)

FAMILIES = ("quadratic", "polyquad", "gas-lagrangean")
DEFAULT_SAMPLES = 512
FD_STEP = 1e-6
THIRD_DERIVATIVE_STEP = 1e-4
THIRD_DERIVATIVE_DIRECTIONS = 4


@dataclass(frozen=True, eq=False)
class ConvexPotential:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]

    def __add__(self, other: "ConvexPotential") -> "ConvexPotential":
        return ConvexPotential(
            f"({self.name} + {other.name})",
            lambda x: self.value(x) + other.value(x),
            lambda x: self.gradient(x) + other.gradient(x),
            lambda x: self.hessian(x) + other.hessian(x),
        )

    def __sub__(self, other: "ConvexPotential") -> "ConvexPotential":
        return ConvexPotential(
            f"({self.name} - {other.name})",
            lambda x: self.value(x) - other.value(x),
            lambda x: self.gradient(x) - other.gradient(x),
            lambda x: self.hessian(x) - other.hessian(x),
        )


def _diagonal_hessian(diag: np.ndarray) -> np.ndarray:
    n = diag.shape[-1]
    out = np.zeros(diag.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = diag
    return out


def quadratic_potential(gamma: float, center: np.ndarray, name: str = "quadratic") -> ConvexPotential:
    """1/2 gamma |x - center|^2."""
    center = np.asarray(center, dtype=float)

    def value(x):
        diff = as_flat(x) - center
        return 0.5 * gamma * np.einsum("...a,...a->...", diff, diff)

    def gradient(x):
        return gamma * (as_flat(x) - center)

    def hessian(x):
        x = as_flat(x)
        return _diagonal_hessian(np.full(x.shape, gamma))

    return ConvexPotential(name, value, gradient, hessian)


def polyquad_potential(dim: int, a: float, b: float, c: float, k: float) -> ConvexPotential:
    """1/2 a|F|^2 + 1/2 b|Z|^2 + c(w-1)^2 + k(sqrt(1+(w-1)^2) - 1)."""
    D = minors_size(dim)
    weights = np.zeros(D)
    weights[: dim * dim] = a
    weights[dim * dim : D - 1] = b

    def value(x):
        x = as_flat(x)
        s = x[..., -1] - 1.0
        return 0.5 * np.einsum("a,...a->...", weights, x * x) + c * s * s + k * (np.sqrt(1.0 + s * s) - 1.0)

    def gradient(x):
        x = as_flat(x)
        s = x[..., -1] - 1.0
        g = weights * x
        g[..., -1] = 2.0 * c * s + k * s / np.sqrt(1.0 + s * s)
        return g

    def hessian(x):
        x = as_flat(x)
        s = x[..., -1] - 1.0
        diag = np.broadcast_to(weights, x.shape).copy()
        diag[..., -1] = 2.0 * c + k / (1.0 + s * s) ** 1.5
        return _diagonal_hessian(diag)

    return ConvexPotential("polyquad", value, gradient, hessian)


def volumetric_potential(dim: int, law: eos.PowerLawPressure, name: str) -> ConvexPotential:
    """g(w) = e(1/w), acting on the w component only; undefined (nan) for w <= 0."""
    D = minors_size(dim)

    def _w(x):
        w = np.asarray(as_flat(x)[..., -1], dtype=float)
        return np.where(w > 0, w, np.nan)

    def value(x):
        return law.energy(1.0 / _w(x))

    def gradient(x):
        w = _w(x)
        g = np.zeros(w.shape + (D,))
        g[..., -1] = -law.pressure(1.0 / w)
        return g

    def hessian(x):
        w = _w(x)
        h = np.zeros(w.shape + (D, D))
        h[..., -1, -1] = law.derivative(1.0 / w) / w**2
        return h

    return ConvexPotential(name, value, gradient, hessian)


def volumetric_third_derivative(law: eos.PowerLawPressure, w):
    """d^3/dw^3 of e(1/w)."""
    w = np.asarray(w, dtype=float)
    rho = 1.0 / w
    return -law.second_derivative(rho) / w**4 - 2.0 * law.derivative(rho) / w**3


@dataclass(frozen=True, eq=False)
class SampleBox:
    """Axis-aligned box in minors space; degenerate axes are allowed."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ModelParameterError("sample box needs lower <= upper componentwise")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def w_range(self) -> tuple[float, float]:
        return float(self.lower[-1]), float(self.upper[-1])

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        unit = qmc.LatinHypercube(d=self.lower.size, seed=np.random.default_rng(seed)).random(n)
        return self.lower + unit * (self.upper - self.lower)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(), "w_range": list(self.w_range)}


@dataclass(frozen=True, eq=False)
class ConstitutiveModel:
    """
    Pair (sigma_I, sigma_E) with declared constants of (h1)/(h2).

    `active` lists the minors components on which Sigma = sigma_I - sigma_E is
    strictly convex; hypothesis checks and the Legendre construction act there.
    """

    name: str
    dim: int
    sigma_I: ConvexPotential
    sigma_E: ConvexPotential
    gamma_I: float
    gamma_v: float
    M: float
    box: SampleBox
    reference: np.ndarray
    active: tuple[int, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.gamma_I, self.gamma_v, self.M) <= 0:
            raise ModelParameterError(
                f"declared constants must be positive: gamma_I={self.gamma_I}, gamma_v={self.gamma_v}, M={self.M}"
            )
        if self.gamma_I <= self.gamma_v:
            logger.warning(f"Model {self.name}: declared gamma_I={self.gamma_I} <= gamma_v={self.gamma_v}, (h1) will fail")

    @cached_property
    def Sigma(self) -> ConvexPotential:
        return self.sigma_I - self.sigma_E

    @property
    def size(self) -> int:
        return minors_size(self.dim)

    @cached_property
    def _active_index(self) -> np.ndarray:
        return np.asarray(self.active, dtype=int)

    def restrict(self, x: np.ndarray) -> np.ndarray:
        return as_flat(x)[..., self._active_index]

    def restrict_hessian(self, H: np.ndarray) -> np.ndarray:
        idx = self._active_index
        return H[..., idx[:, None], idx[None, :]]

    def embed(self, y: np.ndarray, base: np.ndarray | None = None) -> np.ndarray:
        """Full minors vectors with the active components taken from y."""
        y = np.asarray(y, dtype=float)
        base = self.reference if base is None else base
        out = np.array(np.broadcast_to(base, y.shape[:-1] + (self.size,)), dtype=float)
        out[..., self._active_index] = y
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "params": self.params,
            "declared": {"gamma_I": self.gamma_I, "gamma_v": self.gamma_v, "M": self.M},
            "active_components": list(self.active),
            "box": self.box.to_dict(),
        }


def _box_around(center: np.ndarray, half_width: float, w_half_width: float) -> SampleBox:
    widths = np.full(center.shape, half_width)
    widths[-1] = w_half_width
    return SampleBox(center - widths, center + widths)


def _param(params: dict, key: str, default: float) -> float:
    value = params.pop(key, default)
    try:
        return float(value)
    except (TypeError, ValueError) as e:
        raise ModelParameterError(f"parameter '{key}' must be numeric, got {value!r}") from e


def _quadratic(dim: int, params: dict):
    gamma_E = _param(params, "gamma_E", 2.0)
    gamma_v = _param(params, "gamma_v", 0.5)
    half_width = _param(params, "half_width", 1.0)
    reference = params.pop("reference", "identity")
    if gamma_E <= 0 or gamma_v <= 0:
        raise ModelParameterError(f"quadratic family needs gamma_E > 0 and gamma_v > 0, got {gamma_E}, {gamma_v}")
    if reference == "identity":
        center = phi(np.eye(dim)).flat
    elif reference == "zero":
        center = np.zeros(minors_size(dim))
    else:
        raise ModelParameterError(f"quadratic reference must be 'identity' or 'zero', got {reference!r}")
    sigma_E = quadratic_potential(gamma_E, center, "sigma_E")
    sigma_I = sigma_E + quadratic_potential(gamma_v, center, "viscous")
    declared = {"gamma_I": gamma_E + gamma_v, "gamma_v": gamma_v, "M": gamma_E}
    box = _box_around(center, half_width, half_width)
    return sigma_I, sigma_E, declared, box, center, tuple(range(minors_size(dim)))


def _polyquad(dim: int, params: dict):
    a = _param(params, "a", 1.0)
    b = _param(params, "b", 1.0)
    c = _param(params, "c", 1.0)
    k = _param(params, "k", 0.5)
    gamma_v = _param(params, "gamma_v", 0.5)
    half_width = _param(params, "half_width", 1.0)
    w_half_width = _param(params, "w_half_width", 0.5)
    if min(a, b, c, gamma_v) <= 0 or k < 0:
        raise ModelParameterError("polyquad needs a, b, c, gamma_v > 0 and k >= 0")
    if w_half_width >= 1.0:
        raise ModelParameterError("polyquad box must keep w = det F positive (w_half_width < 1)")
    sigma_E = polyquad_potential(dim, a, b, c, k)
    sigma_I = sigma_E + quadratic_potential(gamma_v, np.zeros(minors_size(dim)), "viscous")
    stiffness = [a, 2.0 * c] + ([b] if dim == 3 else [])
    # sup |h'''| for h = k sqrt(1+s^2) is attained at s = 1/2
    third = 3.0 * k * 0.5 / 1.25**2.5
    declared = {
        "gamma_I": gamma_v + min(stiffness),
        "gamma_v": gamma_v,
        "M": max(max(stiffness) + k, third),
    }
    reference = phi(np.eye(dim)).flat
    box = _box_around(reference, half_width, w_half_width)
    return sigma_I, sigma_E, declared, box, reference, tuple(range(minors_size(dim)))


def _gas_lagrangean(dim: int, params: dict):
    w_lo = _param(params, "w_min", 0.8)
    w_hi = _param(params, "w_max", 1.25)
    family = str(params.pop("gas_family", "polytropic-linear"))
    if not 0 < w_lo < w_hi:
        raise ModelParameterError(f"gas-lagrangean needs 0 < w_min < w_max, got {w_lo}, {w_hi}")
    p_I, p_E = eos.gas_laws(family, {key: params.pop(key) for key in list(params)})
    return gas_lagrangean_parts(dim, p_I, p_E, (w_lo, w_hi))


def gas_lagrangean_parts(dim: int, p_I: eos.PowerLawPressure, p_E: eos.PowerLawPressure, w_range: tuple[float, float]):
    w_lo, w_hi = w_range
    ws = np.linspace(w_lo, w_hi, 257)
    rho = 1.0 / ws
    sigma_I_dd = p_I.derivative(rho) / ws**2
    sigma_E_dd = p_E.derivative(rho) / ws**2
    Sigma_dd = sigma_I_dd - sigma_E_dd
    if np.any(sigma_E_dd <= 0) or np.any(Sigma_dd <= 0):
        raise ModelParameterError("gas-lagrangean potentials must be convex on the w box, i.e. p_E' > 0 and (p_I - p_E)' > 0")
    declared = {
        "gamma_I": float(sigma_I_dd.min()),
        "gamma_v": float(Sigma_dd.max()),
        "M": float(max(np.abs(sigma_E_dd).max(), np.abs(volumetric_third_derivative(p_E, ws)).max())),
    }
    sigma_I = volumetric_potential(dim, p_I, "sigma_I")
    sigma_E = volumetric_potential(dim, p_E, "sigma_E")
    reference = phi(np.eye(dim)).flat
    reference[-1] = min(max(1.0, w_lo), w_hi)
    lower, upper = reference.copy(), reference.copy()
    lower[-1], upper[-1] = w_lo, w_hi
    return sigma_I, sigma_E, declared, SampleBox(lower, upper), reference, (minors_size(dim) - 1,)


_BUILDERS = {"quadratic": _quadratic, "polyquad": _polyquad, "gas-lagrangean": _gas_lagrangean}


def builtin_model(
    name: str,
    params: dict | None = None,
    dim: int = 2,
    declared: dict | None = None,
    box: SampleBox | None = None,
) -> ConstitutiveModel:
    """Instantiate a built-in family; `declared` overrides the family's constants."""
    builder = _BUILDERS.get(name)
    if builder is None:
        raise UnknownModelError(f"unknown model family '{name}', expected one of {FAMILIES}")
    if dim not in (2, 3):
        raise ModelParameterError(f"dimension must be 2 or 3, got {dim}")
    remaining = dict(params or {})
    sigma_I, sigma_E, constants, default_box, reference, active = builder(dim, remaining)
    if remaining:
        raise ModelParameterError(f"unexpected parameters for {name}: {sorted(remaining)}")
    constants.update({k: float(v) for k, v in (declared or {}).items() if v is not None})
    if box is not None and box.lower.size != minors_size(dim):
        raise ModelParameterError(f"sample box has {box.lower.size} components, expected {minors_size(dim)}")
    return ConstitutiveModel(
        name=name,
        dim=dim,
        sigma_I=sigma_I,
        sigma_E=sigma_E,
        box=box or default_box,
        reference=reference,
        active=active,
        params=dict(params or {}),
        **constants,
    )


def model_from_config(table) -> ConstitutiveModel:
    """Build a model from the [model] table of a RunConfig."""
    box = None
    if table.box_lower is not None:
        box = SampleBox(np.asarray(table.box_lower, dtype=float), np.asarray(table.box_upper, dtype=float))
    declared = {"gamma_I": table.gamma_I, "gamma_v": table.gamma_v, "M": table.M}
    return builtin_model(table.family, dict(table.params), table.dim, declared, box)


def nonconvex_test_model(dim: int = 2, dip: float = 0.5) -> ConstitutiveModel:
    """Model whose Sigma has Hessian eigenvalue -dip along the first component."""
    D = minors_size(dim)
    reference = phi(np.eye(dim)).flat
    sigma_E = quadratic_potential(2.0, reference, "sigma_E")
    curvature = np.ones(D)
    curvature[0] = -dip

    def value(x):
        diff = as_flat(x) - reference
        return 0.5 * np.einsum("a,...a->...", curvature, diff * diff)

    def gradient(x):
        return curvature * (as_flat(x) - reference)

    def hessian(x):
        return _diagonal_hessian(np.broadcast_to(curvature, as_flat(x).shape).copy())

    indefinite = ConvexPotential("indefinite", value, gradient, hessian)
    return ConstitutiveModel(
        name="nonconvex-test",
        dim=dim,
        sigma_I=sigma_E + indefinite,
        sigma_E=sigma_E,
        gamma_I=1.5,
        gamma_v=1.0,
        M=2.0,
        box=_box_around(reference, 1.0, 0.5),
        reference=reference,
        active=tuple(range(D)),
    )


def solve_sigma_gradient(model: ConstitutiveModel, targets: np.ndarray, x0: np.ndarray | None = None) -> NewtonResult:
    """Damped Newton for grad Sigma(Xi) = p on the active components, rows of shape (n, k)."""
    Sigma = model.Sigma
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    start = model.restrict(model.reference) if x0 is None else np.asarray(x0, dtype=float)

    def gradient(z):
        return model.restrict(Sigma.gradient(model.embed(z)))

    def hessian(z):
        return model.restrict_hessian(Sigma.hessian(model.embed(z)))

    return damped_newton(gradient, hessian, targets, np.broadcast_to(start, targets.shape))


def _min_eig(H: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(H)[..., 0]


def _max_eig(H: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(H)[..., -1]


@dataclass
class H0Report:
    passed: bool
    min_eigenvalue: float
    newton_failures: int
    n_samples: int
    seed: int
    box: dict

    def to_dict(self) -> dict:
        return {"hypothesis": "h0", **self.__dict__}


@dataclass
class H1Estimate:
    gamma_I_est: float
    gamma_v_est: float
    passed: bool
    sigma_E_min_eig: float
    declared: dict

    def __iter__(self):
        return iter((self.gamma_I_est, self.gamma_v_est, self.passed))

    def to_dict(self) -> dict:
        return {"hypothesis": "h1", **self.__dict__}


@dataclass
class H2Estimate:
    M_est: float
    hessian_norm_max: float
    third_derivative_max: float
    passed: bool
    declared_M: float

    def to_dict(self) -> dict:
        return {"hypothesis": "h2", **self.__dict__}


def check_h0(model: ConstitutiveModel, box: SampleBox | None = None, n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> H0Report:
    """Sampled evidence for (h0): positive Hessian of Sigma and invertibility of grad Sigma."""
    box = box or model.box
    xs = box.sample(n_samples, seed)
    min_eig = float(_min_eig(model.restrict_hessian(model.Sigma.hessian(xs))).min())

    grads = model.restrict(model.Sigma.gradient(xs))
    lo, hi = grads.min(axis=0), grads.max(axis=0)
    unit = qmc.LatinHypercube(d=lo.size, seed=np.random.default_rng(seed + 1)).random(n_samples)
    targets = lo + unit * (hi - lo)
    result = solve_sigma_gradient(model, targets)
    failures = int(np.count_nonzero(~result.converged))
    if failures:
        logger.warning(f"check_h0: {failures}/{n_samples} Newton inversions failed for {model.name}")

    return H0Report(
        passed=bool(min_eig > 0 and failures == 0),
        min_eigenvalue=min_eig,
        newton_failures=failures,
        n_samples=n_samples,
        seed=seed,
        box=box.to_dict(),
    )


def check_h1(model: ConstitutiveModel, n_samples: int = DEFAULT_SAMPLES, seed: int = 0, tol: float = 1e-9) -> H1Estimate:
    """gamma_I_est = min lambda_min(hess sigma_I), gamma_v_est = max lambda_max(hess Sigma)."""
    xs = model.box.sample(n_samples, seed)
    H_I = model.restrict_hessian(model.sigma_I.hessian(xs))
    H_E = model.restrict_hessian(model.sigma_E.hessian(xs))
    gamma_I_est = float(_min_eig(H_I).min())
    gamma_v_est = float(_max_eig(H_I - H_E).max())
    sigma_E_min = float(_min_eig(H_E).min())

    brackets = gamma_I_est >= model.gamma_I - tol and gamma_v_est <= model.gamma_v + tol
    passed = bool(gamma_I_est > gamma_v_est > 0 and brackets)
    return H1Estimate(
        gamma_I_est=gamma_I_est,
        gamma_v_est=gamma_v_est,
        passed=passed,
        sigma_E_min_eig=sigma_E_min,
        declared={"gamma_I": model.gamma_I, "gamma_v": model.gamma_v},
    )


def check_h2(model: ConstitutiveModel, n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> H2Estimate:
    """Bound on |hess sigma_E| and a difference-quotient bound on its third derivative."""
    xs = model.box.sample(n_samples, seed)
    H = model.restrict_hessian(model.sigma_E.hessian(xs))
    hessian_norm = float(np.linalg.norm(H, ord=2, axis=(-2, -1)).max())

    rng = np.random.default_rng(seed + 2)
    k = len(model.active)
    third = 0.0
    for _ in range(THIRD_DERIVATIVE_DIRECTIONS):
        u = rng.standard_normal((n_samples, k))
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        shifted = xs.copy()
        shifted[:, list(model.active)] += THIRD_DERIVATIVE_STEP * u
        H_shift = model.restrict_hessian(model.sigma_E.hessian(shifted))
        quotient = np.linalg.norm((H_shift - H) / THIRD_DERIVATIVE_STEP, ord=2, axis=(-2, -1))
        third = max(third, float(quotient.max()))

    M_est = max(hessian_norm, third)
    return H2Estimate(
        M_est=M_est,
        hessian_norm_max=hessian_norm,
        third_derivative_max=third,
        passed=bool(M_est <= model.M * (1.0 + 1e-3) + 1e-9),
        declared_M=model.M,
    )


def fd_consistency(model: ConstitutiveModel, n_samples: int = 16, seed: int = 0) -> dict:
    """Max deviation of analytic gradients/Hessians from central differences of the values."""
    xs = model.box.sample(n_samples, seed)
    report = {}
    for label, potential in (("sigma_I", model.sigma_I), ("sigma_E", model.sigma_E)):
        grad_err = hess_err = 0.0
        g = potential.gradient(xs)
        H = potential.hessian(xs)
        for a in range(model.size):
            e = np.zeros(model.size)
            e[a] = FD_STEP
            fd_grad = (potential.value(xs + e) - potential.value(xs - e)) / (2 * FD_STEP)
            fd_hess = (potential.gradient(xs + e) - potential.gradient(xs - e)) / (2 * FD_STEP)
            grad_err = max(grad_err, float(np.max(np.abs(fd_grad - g[:, a]))))
            hess_err = max(hess_err, float(np.max(np.abs(fd_hess - H[:, :, a]))))
        report[label] = {"gradient": grad_err, "hessian": hess_err}
    return report
