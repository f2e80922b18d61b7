"""SDE models whose drift jumps across the hyperplane ``{x : x[-1] == 0}``.

A model carries the pullback rate ``lam``, the two drift branches (upper and
lower half-space), the diffusion matrix field and the declared bounds that
the decay-constant machinery consumes.  All coefficient callables are
vectorised: they take an ``(n, d)`` array of states and return ``(n, d)``
drifts, ``(n, d, d)`` Jacobians, ``(n, d, m)`` diffusion matrices or
``(n, m, d, d)`` diffusion-column Jacobians.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import CapabilityError, DomainError, InvalidStateError

ArrayFn = Callable[[np.ndarray], np.ndarray]

CONSTANT_FIELDS = (
    "K_alpha_tilde",
    "K_sigma_tilde",
    "K_alpha",
    "K_sigma",
    "norm_alpha_inf",
    "norm_alpha_d_inf",
    "norm_sigma_inf",
    "B_sigma",
    "norm_D_inf",
)


@dataclass(frozen=True)
class ModelConstants:
    """Declared bounds on the coefficients.

    Matrix norms are Hilbert-Schmidt, vector norms Euclidean.  ``K_alpha`` and
    ``K_sigma`` are sup-norms of the Jacobians, the ``*_tilde`` entries are
    Lipschitz constants (per half-space for the drift, global for sigma).
    """

    K_alpha_tilde: float
    K_sigma_tilde: float
    K_alpha: float
    K_sigma: float
    norm_alpha_inf: float
    norm_alpha_d_inf: float
    norm_sigma_inf: float
    B_sigma: float
    norm_D_inf: float

    def __post_init__(self):
        for name in CONSTANT_FIELDS:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise DomainError(f"declared constant {name} must be finite and >= 0, got {value!r}")
            object.__setattr__(self, name, float(value))

    @property
    def K(self) -> float:
        """Growth rate ``K_alpha + K_sigma**2 / 2`` of the derivative flow."""
        return self.K_alpha + 0.5 * self.K_sigma**2

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in CONSTANT_FIELDS}

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> "ModelConstants":
        missing = [k for k in CONSTANT_FIELDS if k not in values]
        if missing:
            raise DomainError(f"missing declared constants: {', '.join(missing)}")
        extra = sorted(set(values) - set(CONSTANT_FIELDS))
        if extra:
            raise DomainError(f"unknown declared constants: {', '.join(extra)}")
        return cls(**{k: values[k] for k in CONSTANT_FIELDS})


@dataclass(frozen=True, eq=False)
class HyperplaneDriftModel:
    """Coefficients of ``dX = (-lam X + alpha(X)) dt + sigma(X) dW``.

    ``alpha`` is ``alpha_plus`` on ``x[-1] >= 0`` and ``alpha_minus`` below.
    On the hyperplane itself the upper branch is used; the diffusion never
    spends positive time there, so the choice does not affect solutions.

    When ``sigma_constant`` is given, ``sigma`` must return it everywhere;
    integrators use it to skip per-state matrix products.

    ``family`` optionally identifies the coefficients as a member
    ``(a, c, s0, b)`` of the compiled family

    * ``alpha_pm(x) = +-c e_d`` plus, for ``d = 2``, ``(a sin x2, a cos x1)``;
    * ``sigma(x) = diag(s0 + b sin x_i)`` with ``m = d``;

    in which case ensemble integrators run a compiled kernel.
    """

    name: str
    dim_d: int
    dim_m: int
    lam: float
    alpha_plus: ArrayFn
    alpha_minus: ArrayFn
    sigma: ArrayFn
    declared: ModelConstants
    alpha_plus_jac: ArrayFn | None = None
    alpha_minus_jac: ArrayFn | None = None
    sigma_jac: ArrayFn | None = None
    sigma_constant: np.ndarray | None = None
    params: Mapping[str, float] = field(default_factory=dict)
    family: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.dim_d < 1 or self.dim_m < 1:
            raise DomainError("dimensions must be positive")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise DomainError(f"lambda must be positive, got {self.lam!r}")
        if self.sigma_constant is not None:
            s = np.array(self.sigma_constant, dtype=float)
            if s.shape != (self.dim_d, self.dim_m):
                raise DomainError("sigma_constant must have shape (d, m)")
            s.setflags(write=False)
            object.__setattr__(self, "sigma_constant", s)
        if self.family is not None:
            fam = tuple(float(v) for v in self.family)
            if len(fam) != 4 or self.dim_m != self.dim_d or (fam[0] != 0.0 and self.dim_d != 2):
                raise DomainError("family needs (a, c, s0, b), m = d, and a = 0 unless d = 2")
            object.__setattr__(self, "family", fam)

    @property
    def has_jacobians(self) -> bool:
        return None not in (self.alpha_plus_jac, self.alpha_minus_jac, self.sigma_jac)

    def with_lambda(self, lam: float) -> "HyperplaneDriftModel":
        return dataclasses.replace(self, lam=float(lam))

    def upper(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask of states evaluated with the upper branch."""
        return x[:, -1] >= 0.0

    def alpha(self, x: np.ndarray) -> np.ndarray:
        up = self.upper(x)
        if up.all():
            return self.alpha_plus(x)
        if not up.any():
            return self.alpha_minus(x)
        return np.where(up[:, None], self.alpha_plus(x), self.alpha_minus(x))

    def drift(self, x: np.ndarray) -> np.ndarray:
        return -self.lam * x + self.alpha(x)

    def alpha_jac(self, x: np.ndarray) -> np.ndarray:
        if self.alpha_plus_jac is None or self.alpha_minus_jac is None:
            raise CapabilityError(f"model {self.name!r} does not supply drift Jacobians")
        up = self.upper(x)
        if up.all():
            return self.alpha_plus_jac(x)
        if not up.any():
            return self.alpha_minus_jac(x)
        return np.where(up[:, None, None], self.alpha_plus_jac(x), self.alpha_minus_jac(x))

    def sigma_columns_jac(self, x: np.ndarray) -> np.ndarray:
        if self.sigma_jac is None:
            raise CapabilityError(f"model {self.name!r} does not supply diffusion Jacobians")
        return self.sigma_jac(x)

    def noise(self, x: np.ndarray, dw: np.ndarray) -> np.ndarray:
        """``sum_k sigma_k(x) dw_k`` for states ``(n, d)`` and increments ``(n, m)``."""
        if self.sigma_constant is not None:
            return dw @ self.sigma_constant.T
        return np.einsum("nik,nk->ni", self.sigma(x), dw)

    def jump_columns(self, x: np.ndarray) -> np.ndarray:
        """``alpha_plus - alpha_minus`` at the projections of ``x`` onto the hyperplane."""
        xs = np.array(x, dtype=float, copy=True)
        xs[:, -1] = 0.0
        return self.alpha_plus(xs) - self.alpha_minus(xs)


def _as_states(model: HyperplaneDriftModel, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != model.dim_d or arr.ndim != 2:
        raise InvalidStateError(f"expected states with {model.dim_d} coordinates, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError("state contains non-finite entries")
    return arr, single


def drift_eval(model: HyperplaneDriftModel, x) -> np.ndarray:
    """Evaluate ``-lam x + alpha(x)`` at one state or a batch of states."""
    arr, single = _as_states(model, x)
    out = model.drift(arr)
    return out[0] if single else out


def jump_matrix(model: HyperplaneDriftModel, x_s) -> np.ndarray:
    """Jump matrix at a point of the hyperplane.

    Only the last column is nonzero; it holds ``alpha_plus - alpha_minus``.
    """
    arr, _ = _as_states(model, x_s)
    if arr.shape[0] != 1:
        raise DomainError("jump_matrix takes a single point")
    if arr[0, -1] != 0.0:
        raise DomainError(f"point is not on the hyperplane (last coordinate {arr[0, -1]!r})")
    out = np.zeros((model.dim_d, model.dim_d))
    out[:, -1] = model.jump_columns(arr)[0]
    return out


# -- validation ---------------------------------------------------------------

_REL_TOL = 1e-9
_ABS_TOL = 1e-12
FD_STEP = 1e-6


@dataclass(frozen=True)
class ConditionCheck:
    condition: str
    quantity: str
    declared: float
    sampled: float
    passed: bool


@dataclass(frozen=True)
class ValidationReport:
    model: str
    n_samples: int
    seed: int
    checks: tuple[ConditionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[ConditionCheck]:
        return [c for c in self.checks if not c.passed]

    def get(self, quantity: str) -> ConditionCheck:
        for c in self.checks:
            if c.quantity == quantity:
                return c
        raise KeyError(quantity)


def _upper_check(condition, quantity, declared, sampled):
    ok = sampled <= declared * (1.0 + _REL_TOL) + _ABS_TOL
    return ConditionCheck(condition, quantity, float(declared), float(sampled), bool(ok))


def _hs(a: np.ndarray, axes) -> np.ndarray:
    return np.sqrt(np.sum(a * a, axis=axes))


def _fd_jacobian(fn: ArrayFn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` (output ``(n, d)``) at states ``x``.

    Callers keep ``|x[:, -1]| > h`` so that no stencil straddles the hyperplane.
    """
    n, d = x.shape
    jac = np.empty((n, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        jac[:, :, j] = (fn(x + e) - fn(x - e)) / (2 * h)
    return jac


def _pair_quotients(fn: ArrayFn, x: np.ndarray, y: np.ndarray, axes) -> np.ndarray:
    diff = fn(x) - fn(y)
    dist = np.linalg.norm(x - y, axis=1)
    return _hs(diff, axes) / dist


def validate_model(
    model: HyperplaneDriftModel,
    n_samples: int = 10_000,
    box: float = 5.0,
    seed: int = 0,
    check_jacobians: bool = True,
) -> ValidationReport:
    """Check declared constants against sampled values of the coefficients.

    States are drawn uniformly from ``[-box, box]^d``.  Lipschitz quotients
    use pairs at log-uniform separations in ``[1e-4, 1]`` kept inside one
    half-space for the drift.  The report fails if any sampled value exceeds
    its declaration or if the ellipticity floor is not positive.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    d, m = model.dim_d, model.dim_m
    c = model.declared
    x = rng.uniform(-box, box, size=(n_samples, d))
    on_s = x.copy()
    on_s[:, -1] = 0.0
    checks: list[ConditionCheck] = []

    # (A1) boundedness, both branches on S included.
    a_vals = np.concatenate([model.alpha(x), model.alpha_plus(on_s), model.alpha_minus(on_s)])
    checks.append(_upper_check("A1", "norm_alpha_inf", c.norm_alpha_inf, np.max(np.linalg.norm(a_vals, axis=1))))
    checks.append(_upper_check("A1", "norm_alpha_d_inf", c.norm_alpha_d_inf, np.max(np.abs(a_vals[:, -1]))))

    # (A2) Lipschitz on each closed half-space.
    direction = rng.normal(size=(n_samples, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = 10.0 ** rng.uniform(-4, 0, size=(n_samples, 1))
    y = x + r * direction
    same = (x[:, -1] >= 0) == (y[:, -1] >= 0)
    y_same = np.where(same[:, None], y, x - r * direction)
    same = (x[:, -1] >= 0) == (y_same[:, -1] >= 0)
    xs, ys = x[same], y_same[same]
    lip_alpha = 0.0
    if len(xs):
        up = xs[:, -1] >= 0
        for mask, branch in ((up, model.alpha_plus), (~up, model.alpha_minus)):
            if mask.any():
                lip_alpha = max(lip_alpha, float(np.max(_pair_quotients(branch, xs[mask], ys[mask], 1))))
    checks.append(_upper_check("A2", "K_alpha_tilde", c.K_alpha_tilde, lip_alpha))

    # (B1), (B2) boundedness and global Lipschitz continuity of sigma.
    sig = model.sigma(x)
    checks.append(_upper_check("B1", "norm_sigma_inf", c.norm_sigma_inf, np.max(_hs(sig, (1, 2)))))
    lip_sigma = float(np.max(_pair_quotients(model.sigma, x, y, (1, 2))))
    checks.append(_upper_check("B2", "K_sigma_tilde", c.K_sigma_tilde, lip_sigma))

    # (B3) uniform ellipticity: smallest eigenvalue of sigma sigma^T.
    gram = sig @ np.transpose(sig, (0, 2, 1))
    min_rayleigh = float(np.min(np.linalg.eigvalsh(gram)[:, 0])) if m >= d else 0.0
    ok = c.B_sigma > 0 and min_rayleigh >= c.B_sigma * (1.0 - _REL_TOL) - _ABS_TOL
    checks.append(ConditionCheck("B3", "B_sigma", c.B_sigma, min_rayleigh, bool(ok)))

    # Jump matrix on S.
    checks.append(_upper_check("D", "norm_D_inf", c.norm_D_inf, np.max(np.linalg.norm(model.jump_columns(on_s), axis=1))))

    if check_jacobians and model.has_jacobians:
        # Keep stencils off the hyperplane.
        xj = x.copy()
        small = np.abs(xj[:, -1]) < 10 * FD_STEP
        xj[small, -1] = np.where(xj[small, -1] >= 0, 10 * FD_STEP, -10 * FD_STEP)
        ja = model.alpha_jac(xj)
        js = model.sigma_columns_jac(xj)
        checks.append(_upper_check("A2", "K_alpha", c.K_alpha, np.max(_hs(ja, (1, 2)))))
        checks.append(_upper_check("B2", "K_sigma", c.K_sigma, np.max(_hs(js, (1, 2, 3)))))
        fd_alpha = _fd_jacobian(model.alpha, xj)
        err_alpha = np.max(np.abs(fd_alpha - ja))
        fd_sigma = np.stack(
            [_fd_jacobian(lambda z, k=k: model.sigma(z)[:, :, k], xj) for k in range(m)], axis=1
        )
        err_sigma = np.max(np.abs(fd_sigma - js))
        checks.append(_upper_check("jacobian", "alpha_jac_fd_error", 1e-5, err_alpha))
        checks.append(_upper_check("jacobian", "sigma_jac_fd_error", 1e-5, err_sigma))

    return ValidationReport(model.name, n_samples, seed, tuple(checks))


# -- built-in models ----------------------------------------------------------


def _zeros_jac(d: int) -> ArrayFn:
    return lambda x: np.zeros((x.shape[0], d, d))


def ou_model(d: int = 2, lam: float = 1.0, sigma_scale: float = 1.0) -> HyperplaneDriftModel:
    """Ornstein-Uhlenbeck model: ``alpha = 0``, ``sigma = sigma_scale * I``."""
    s = float(sigma_scale)
    sig = s * np.eye(d)
    declared = ModelConstants(
        K_alpha_tilde=0.0,
        K_sigma_tilde=0.0,
        K_alpha=0.0,
        K_sigma=0.0,
        norm_alpha_inf=0.0,
        norm_alpha_d_inf=0.0,
        norm_sigma_inf=abs(s) * math.sqrt(d),
        B_sigma=s * s,
        norm_D_inf=0.0,
    )
    zero = lambda x: np.zeros_like(x)  # noqa: E731
    return HyperplaneDriftModel(
        name="ou",
        dim_d=d,
        dim_m=d,
        lam=lam,
        alpha_plus=zero,
        alpha_minus=zero,
        sigma=lambda x: np.broadcast_to(sig, (x.shape[0], d, d)),
        declared=declared,
        alpha_plus_jac=_zeros_jac(d),
        alpha_minus_jac=_zeros_jac(d),
        sigma_jac=lambda x: np.zeros((x.shape[0], d, d, d)),
        sigma_constant=sig,
        params={"sigma_scale": s},
        family=(0.0, 0.0, s, 0.0),
    )


def bang_bang_model(c: float = 0.5, d: int = 2, lam: float = 1.0) -> HyperplaneDriftModel:
    """Piecewise-constant vertical drift ``c * sign(x[-1]) e_d`` with ``sigma = I``."""
    c = float(c)
    e_d = np.zeros(d)
    e_d[-1] = 1.0
    declared = ModelConstants(
        K_alpha_tilde=0.0,
        K_sigma_tilde=0.0,
        K_alpha=0.0,
        K_sigma=0.0,
        norm_alpha_inf=abs(c),
        norm_alpha_d_inf=abs(c),
        norm_sigma_inf=math.sqrt(d),
        B_sigma=1.0,
        norm_D_inf=2 * abs(c),
    )
    eye = np.eye(d)
    return HyperplaneDriftModel(
        name="bangbang",
        dim_d=d,
        dim_m=d,
        lam=lam,
        alpha_plus=lambda x: np.broadcast_to(c * e_d, x.shape).copy(),
        alpha_minus=lambda x: np.broadcast_to(-c * e_d, x.shape).copy(),
        sigma=lambda x: np.broadcast_to(eye, (x.shape[0], d, d)),
        declared=declared,
        alpha_plus_jac=_zeros_jac(d),
        alpha_minus_jac=_zeros_jac(d),
        sigma_jac=lambda x: np.zeros((x.shape[0], d, d, d)),
        sigma_constant=eye,
        params={"c": c},
        family=(0.0, c, 1.0, 0.0),
    )


def smooth_model(
    a: float = 0.2, c: float = 0.25, s0: float = 1.0, b: float = 0.2, lam: float = 1.0
) -> HyperplaneDriftModel:
    """Planar model with smooth drift branches, a jump of size ``2c`` and state-dependent noise.

    ``alpha_pm(x) = (a sin x2, +-c + a cos x1)`` and
    ``sigma(x) = diag(s0 + b sin x1, s0 + b sin x2)`` with ``s0 > b >= 0``.
    """
    a, c, s0, b = float(a), float(c), float(s0), float(b)
    if not s0 > abs(b):
        raise DomainError("smooth model needs s0 > |b| for ellipticity")

    def branch(sign):
        def f(x):
            out = np.empty_like(x)
            out[:, 0] = a * np.sin(x[:, 1])
            out[:, 1] = sign * c + a * np.cos(x[:, 0])
            return out

        return f

    def alpha_jac(x):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 1] = a * np.cos(x[:, 1])
        out[:, 1, 0] = -a * np.sin(x[:, 0])
        return out

    def sigma(x):
        out = np.zeros((x.shape[0], 2, 2))
        out[:, 0, 0] = s0 + b * np.sin(x[:, 0])
        out[:, 1, 1] = s0 + b * np.sin(x[:, 1])
        return out

    def sigma_jac(x):
        out = np.zeros((x.shape[0], 2, 2, 2))
        out[:, 0, 0, 0] = b * np.cos(x[:, 0])
        out[:, 1, 1, 1] = b * np.cos(x[:, 1])
        return out

    root2 = math.sqrt(2.0)
    declared = ModelConstants(
        K_alpha_tilde=abs(a) * root2,
        K_sigma_tilde=abs(b) * root2,
        K_alpha=abs(a) * root2,
        K_sigma=abs(b) * root2,
        norm_alpha_inf=math.hypot(a, abs(c) + abs(a)),
        norm_alpha_d_inf=abs(c) + abs(a),
        norm_sigma_inf=root2 * (s0 + abs(b)),
        B_sigma=(s0 - abs(b)) ** 2,
        norm_D_inf=2 * abs(c),
    )
    return HyperplaneDriftModel(
        name="smooth",
        dim_d=2,
        dim_m=2,
        lam=lam,
        alpha_plus=branch(1.0),
        alpha_minus=branch(-1.0),
        sigma=sigma,
        declared=declared,
        alpha_plus_jac=alpha_jac,
        alpha_minus_jac=alpha_jac,
        sigma_jac=sigma_jac,
        params={"a": a, "c": c, "s0": s0, "b": b},
        family=(a, c, s0, b),
    )


MODEL_REGISTRY: dict[str, Callable[..., HyperplaneDriftModel]] = {
    "ou": ou_model,
    "bangbang": bang_bang_model,
    "smooth": smooth_model,
}


def build_model(
    name: str,
    d: int,
    m: int,
    lam: float,
    params: Mapping[str, float] | None = None,
    declared: ModelConstants | None = None,
) -> HyperplaneDriftModel:
    """Instantiate a registered model; ``declared`` replaces its default constants."""
    if name not in MODEL_REGISTRY:
        raise DomainError(f"unknown model {name!r}; known: {', '.join(sorted(MODEL_REGISTRY))}")
    kwargs = dict(params or {})
    if name in ("ou", "bangbang"):
        kwargs["d"] = d
    try:
        model = MODEL_REGISTRY[name](lam=lam, **kwargs)
    except TypeError as exc:
        raise DomainError(f"bad parameters for model {name!r}: {exc}") from None
    if (model.dim_d, model.dim_m) != (d, m):
        raise DomainError(f"model {name!r} has (d, m) = ({model.dim_d}, {model.dim_m}), config says ({d}, {m})")
    if declared is not None:
        model = dataclasses.replace(model, declared=declared)
    return model
