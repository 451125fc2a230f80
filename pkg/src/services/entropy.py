"""
Entropy Psi(Xi, tau) = sigma_I(Xi) + Xi . tau + G(tau) of the relaxation system.

G is the Legendre conjugate of Sigma = sigma_I - sigma_E evaluated at -tau and is
represented implicitly through Newton inversion of grad Sigma:
    grad G(tau) = -(grad Sigma)^{-1}(-tau),   hess G(tau) = [hess Sigma(-grad G(tau))]^{-1}.
For models whose Sigma depends on part of Xi only, tau lives on the active
components; the remaining components of tau are ignored.
"""
import hashlib
import logging
import threading
from dataclasses import dataclass, field

import numpy as np
from cachetools import LRUCache

from src.config import settings
from src.services.constitutive import DEFAULT_SAMPLES, ConstitutiveModel, SampleBox, solve_sigma_gradient
from src.services.errors import NoConvergence
from src.services.minors import as_flat

logger = logging.getLogger(__name__)

ZERO_SET_TOL = 1e-9


def invert_grad_sigma(model: ConstitutiveModel, p, x0=None) -> np.ndarray:
    """Xi with grad Sigma(Xi) = p on the active components; full minors vectors out."""
    p = as_flat(p)
    lead = p.shape[:-1]
    targets = model.restrict(p).reshape(-1, len(model.active))
    start = None if x0 is None else np.broadcast_to(model.restrict(as_flat(x0)), lead + (len(model.active),)).reshape(targets.shape)
    result = solve_sigma_gradient(model, targets, start)
    if not result.all_converged:
        failures = int(np.count_nonzero(~result.converged))
        raise NoConvergence(
            f"grad Sigma inversion failed at {failures} of {targets.shape[0]} points "
            f"(max residual {result.max_residual:.3e}); target outside the certified image or ill-conditioned",
            residual=result.max_residual,
            failures=failures,
        )
    return model.embed(result.x).reshape(lead + (model.size,))


def _array_key(*arrays) -> str:
    hasher = hashlib.blake2b(digest_size=16)
    for arr in arrays:
        if arr is None:
            hasher.update(b"none")
            continue
        arr = np.ascontiguousarray(arr, dtype=float)
        hasher.update(str(arr.shape).encode())
        hasher.update(arr.tobytes())
    return hasher.hexdigest()


@dataclass(frozen=True, eq=False)
class EntropyStructure:
    """Immutable after build_G; the inversion cache is synchronized."""

    model: ConstitutiveModel
    tau_box: SampleBox
    anchor: np.ndarray
    normalization: float = 0.0
    _cache: LRUCache = field(default_factory=lambda: LRUCache(maxsize=settings.CACHE_SIZE), repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def conjugate_point(self, tau, guess=None) -> np.ndarray:
        """Xi(-tau) = -grad G(tau), i.e. the solution of grad Sigma(Xi) = -tau."""
        tau = as_flat(tau)
        guess_flat = None if guess is None else as_flat(guess)
        key = _array_key(self.model.restrict(tau), guess_flat)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        xi = invert_grad_sigma(self.model, -tau, x0=guess_flat)
        xi.setflags(write=False)
        with self._lock:
            self._cache[key] = xi
        return xi

    def G_grad(self, tau, guess=None) -> np.ndarray:
        """Active components of grad G(tau)."""
        return -self.model.restrict(self.conjugate_point(tau, guess))

    def G_value(self, tau, guess=None) -> np.ndarray:
        xi = self.conjugate_point(tau, guess)
        tau_a = self.model.restrict(as_flat(tau))
        # Sigma*(p) = p . Xi(p) - Sigma(Xi(p)) at p = -tau
        conjugate = -np.einsum("...a,...a->...", tau_a, self.model.restrict(xi)) - self.model.Sigma.value(xi)
        return conjugate + self.normalization

    def G_hess(self, tau, guess=None) -> np.ndarray:
        xi = self.conjugate_point(tau, guess)
        return np.linalg.inv(self.model.restrict_hessian(self.model.Sigma.hessian(xi)))

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor.tolist(),
            "normalization": self.normalization,
            "tau_box": self.tau_box.to_dict(),
        }


def _image_box(model: ConstitutiveModel, n_samples: int = 256, seed: int = 0) -> SampleBox:
    xs = np.concatenate([model.box.sample(n_samples, seed), model.box.lower[None], model.box.upper[None]])
    taus = -model.Sigma.gradient(xs)
    return SampleBox(taus.min(axis=0), taus.max(axis=0))


def build_G(model: ConstitutiveModel, tau_box: SampleBox | None = None, anchor=None) -> EntropyStructure:
    """
    Build the entropy structure, normalized so that Psi(anchor, -grad Sigma(anchor)) = sigma_E(anchor).
    """
    anchor = model.reference.copy() if anchor is None else np.array(as_flat(anchor), dtype=float)
    tau_box = tau_box or _image_box(model)

    hess = model.restrict_hessian(model.Sigma.hessian(anchor))
    if np.linalg.eigvalsh(hess)[0] <= 0:
        raise NoConvergence(f"Sigma is not strictly convex at the anchor of {model.name}; G is undefined there")

    raw = EntropyStructure(model=model, tau_box=tau_box, anchor=anchor)
    tau_anchor = -model.Sigma.gradient(anchor)
    psi_raw = _psi(raw, anchor, tau_anchor, guess=anchor)
    normalization = float(model.sigma_E.value(anchor) - psi_raw)
    logger.info(f"Built entropy structure for {model.name}: normalization {normalization:.3e}")
    return EntropyStructure(model=model, tau_box=tau_box, anchor=anchor, normalization=normalization)


def _psi(structure: EntropyStructure, xi, tau, guess=None):
    model = structure.model
    xi, tau = as_flat(xi), as_flat(tau)
    coupling = np.einsum("...a,...a->...", model.restrict(xi), model.restrict(tau))
    return model.sigma_I.value(xi) + coupling + structure.G_value(tau, guess)


def psi(structure: EntropyStructure, xi, tau, guess=None) -> np.ndarray:
    """Psi(Xi, tau); the Newton inversion is warm-started at Xi unless a guess is given."""
    return _psi(structure, xi, tau, as_flat(xi) if guess is None else guess)


def dissipation(structure: EntropyStructure, xi, tau, guess=None) -> np.ndarray:
    """D = (Xi + grad G(tau)) . (tau + grad Sigma(Xi)) >= 0."""
    model = structure.model
    xi, tau = as_flat(xi), as_flat(tau)
    grad_G = structure.G_grad(tau, xi if guess is None else guess)
    left = model.restrict(xi) + grad_G
    right = model.restrict(tau + model.Sigma.gradient(xi))
    return np.einsum("...a,...a->...", left, right)


def equilibrium_tau(model: ConstitutiveModel, xi) -> np.ndarray:
    """tau on the equilibrium manifold, grad(sigma_E - sigma_I)(Xi)."""
    return -model.Sigma.gradient(as_flat(xi))


def hessian_psi(structure: EntropyStructure, xi, tau, guess=None) -> np.ndarray:
    """Block Hessian [[hess sigma_I, I], [I, hess G]] on the active components."""
    model = structure.model
    xi, tau = as_flat(xi), as_flat(tau)
    H_I = model.restrict_hessian(model.sigma_I.hessian(xi))
    H_G = structure.G_hess(tau, xi if guess is None else guess)
    k = H_I.shape[-1]
    eye = np.broadcast_to(np.eye(k), H_I.shape)
    top = np.concatenate([H_I, eye], axis=-1)
    bottom = np.concatenate([eye, H_G], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def hessian_psi_min_eig(structure: EntropyStructure, xi, tau, guess=None) -> np.ndarray:
    return np.linalg.eigvalsh(hessian_psi(structure, xi, tau, guess))[..., 0]


def delta_lower_bound(gamma_I: float, gamma_v: float) -> float:
    """
    max over gamma_v < delta < gamma_I of min(gamma_I - delta, 1/gamma_v - 1/delta),
    a lower bound for the Hessian of Psi under (h1); 0 when (h1) fails.
    """
    if not gamma_I > gamma_v > 0:
        return 0.0
    b = gamma_I - 1.0 / gamma_v
    delta = 0.5 * (b + np.sqrt(b * b + 4.0))
    return float(gamma_I - delta)


def entropy_lower_constant(gamma_I: float, gamma_v: float) -> float:
    """c in e_r >= c(|v - v^|^2 + |Xi - Xi^|^2 + |tau - tau^|^2)."""
    return min(0.5, 0.5 * delta_lower_bound(gamma_I, gamma_v))


@dataclass
class CharReport:
    passed: bool
    zero_set_forward: float  # max |Xi + grad G(-grad Sigma(Xi))|
    zero_set_backward: float  # max |tau + grad Sigma(-grad G(tau))|
    G_min_eig: float
    Sigma_min_eig: float
    dissipation_min: float
    monotonicity_min: float
    n_samples: int
    seed: int
    tolerance: float = ZERO_SET_TOL
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_char(structure: EntropyStructure, n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> CharReport:
    """Sampled verification of the Legendre characterization and of the sign inequalities."""
    model = structure.model
    xs = model.box.sample(n_samples, seed)
    taus = structure.tau_box.sample(n_samples, seed + 1)

    tau_eq = equilibrium_tau(model, xs)
    forward = model.restrict(xs) + structure.G_grad(tau_eq, xs)
    zero_forward = float(np.abs(forward).max())

    xi_of_tau = structure.conjugate_point(taus)
    backward = model.restrict(taus + model.Sigma.gradient(xi_of_tau))
    zero_backward = float(np.abs(backward).max())

    G_min = float(np.linalg.eigvalsh(structure.G_hess(taus))[..., 0].min())
    Sigma_min = float(np.linalg.eigvalsh(model.restrict_hessian(model.Sigma.hessian(xs)))[..., 0].min())

    D = dissipation(structure, xs, taus, guess=xi_of_tau)
    dissipation_min = float(D.min())

    ys = model.box.sample(n_samples, seed + 2)
    monotone = np.einsum(
        "na,na->n",
        model.restrict(xs - ys),
        model.restrict(model.Sigma.gradient(xs) - model.Sigma.gradient(ys)),
    )
    monotonicity_min = float(monotone.min())

    tol = ZERO_SET_TOL
    passed = (
        zero_forward <= tol * max(1.0, float(np.abs(xs).max()))
        and zero_backward <= tol * max(1.0, float(np.abs(taus).max()))
        and G_min > 0
        and Sigma_min > 0
        and dissipation_min >= -tol
        and monotonicity_min >= -tol
    )
    notes = []
    if len(model.active) < model.size:
        notes.append(f"tau restricted to components {list(model.active)}")
    return CharReport(
        passed=bool(passed),
        zero_set_forward=zero_forward,
        zero_set_backward=zero_backward,
        G_min_eig=G_min,
        Sigma_min_eig=Sigma_min,
        dissipation_min=dissipation_min,
        monotonicity_min=monotonicity_min,
        n_samples=n_samples,
        seed=seed,
        notes=notes,
    )
