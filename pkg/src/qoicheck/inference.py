"""Posterior samplers and sampler-quality diagnostics.

Every sampler returns a PosteriorMatrix with exactly ``target_S`` draws,
obtained by thinning the pooled post-warmup chains at equal strides. Chain
quality is assessed on the full (unthinned) chains with rank-normalized
split R-hat and autocorrelation ESS; if the smallest ESS falls below the
configured floor the post-warmup length is doubled and the fit is retried,
up to ``max_attempts`` rounds, after which SamplerQualityError is raised
with the offending diagnostics attached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from . import _kernels
from .models import (
    CS1,
    CS2,
    TOY_BERNOULLI,
    TOY_NORMAL,
    Dataset,
    ModelSpec,
    ParameterDraw,
    ParameterError,
    parameter_schema,
)
from .rngdist import SeedStream

_INIT_LOG_STEP = math.log(0.1)


class SamplerQualityError(RuntimeError):
    """Raised when a chain fails its quality gate after all retry rounds."""

    def __init__(self, message: str, diagnostics: dict, replication: int | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.replication = replication

    def __reduce__(self):
        # keeps the attached diagnostics when crossing a process boundary
        return (self.__class__, (self.args[0], self.diagnostics, self.replication))


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    warmup: int = 5000
    post_warmup: int = 1250
    target_S: int = 99
    rw_target_acceptance: float = 0.44
    ess_floor_fraction: float = 0.8
    max_attempts: int = 3

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 1 or self.post_warmup < 1:
            raise ParameterError("chains, warmup and post_warmup must be positive")
        if self.target_S < 10:
            raise ParameterError("target_S must be at least 10")
        if self.chains * self.post_warmup < self.target_S:
            raise ParameterError(
                "pooled post-warmup draws must cover target_S "
                f"({self.chains}*{self.post_warmup} < {self.target_S})"
            )
        if not 0.0 < self.rw_target_acceptance < 1.0:
            raise ParameterError("rw_target_acceptance must lie in (0, 1)")
        if not 0.0 < self.ess_floor_fraction <= 1.0:
            raise ParameterError("ess_floor_fraction must lie in (0, 1]")
        if self.max_attempts < 1:
            raise ParameterError("max_attempts must be positive")


@dataclass
class PosteriorMatrix:
    """Thinned posterior draws, one row per retained draw."""

    draws: np.ndarray
    schema: tuple[str, ...]
    diagnostics: dict = field(default_factory=dict)
    thinning: int = 1
    chain_index: np.ndarray | None = None
    iteration_index: np.ndarray | None = None

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2:
            raise ParameterError("draws must be a 2-d array")
        if self.draws.shape[1] != len(self.schema):
            raise ParameterError("draw width does not match schema length")
        if not np.all(np.isfinite(self.draws)):
            raise ParameterError("posterior draws must be finite")

    @property
    def S(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.schema.index(name)
        except ValueError:
            raise KeyError(f"no column {name!r} in posterior schema") from None
        return self.draws[:, j]

    def param_draw(self, s: int) -> ParameterDraw:
        row = self.draws[s]
        return ParameterDraw(dict(zip(self.schema, (float(v) for v in row))))

    def to_csv(self, path) -> None:
        chain = (
            self.chain_index
            if self.chain_index is not None
            else np.zeros(self.S, dtype=int)
        )
        iteration = (
            self.iteration_index
            if self.iteration_index is not None
            else np.arange(self.S)
        )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("chain,iteration," + ",".join(self.schema) + "\n")
            for s in range(self.S):
                vals = ",".join(repr(float(v)) for v in self.draws[s])
                fh.write(f"{int(chain[s])},{int(iteration[s])},{vals}\n")


# ---------------------------------------------------------------------------
# chain diagnostics


def _rank_normalize(pooled: np.ndarray) -> np.ndarray:
    n = pooled.size
    ranks = rankdata(pooled.ravel(), method="average").reshape(pooled.shape)
    return ndtri((ranks - 0.375) / (n + 0.25))


def _split_rhat(z: np.ndarray) -> float:
    # z: (m, n) split chains, already rank-normalized
    m, n = z.shape
    chain_means = z.mean(axis=1)
    w = z.var(axis=1, ddof=1).mean()
    b = n * chain_means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    if w <= 0.0:
        return math.inf
    return math.sqrt(var_plus / w)


def _autocov(seq: np.ndarray) -> np.ndarray:
    n = seq.size
    centered = seq - seq.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def _ess(z: np.ndarray) -> float:
    # Geyer initial-monotone-sequence estimate over split chains
    m, n = z.shape
    acov = np.stack([_autocov(z[c]) for c in range(m)])
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = (n - 1) / n * w + z.mean(axis=1).var(ddof=1)
    if var_plus <= 0.0:
        return math.nan
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums must stay positive and non-increasing
    tau = 0.0
    prev_pair = math.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + (rho[k + 1] if k + 1 < n else 0.0)
        if pair < 0.0:
            break
        pair = min(pair, prev_pair)
        tau += pair
        prev_pair = pair
    tau = max(2.0 * tau - 1.0, 1.0 / math.log10(m * n + 10.0))
    return m * n / tau


def _diagnose_chains(chains: np.ndarray, schema: tuple[str, ...]) -> dict:
    """Per-parameter split R-hat and ESS from (C, n, p) post-warmup chains."""
    c, n, p = chains.shape
    half = n // 2
    if half < 4:
        raise ParameterError("need at least 4 draws per split chain for diagnostics")
    report: dict[str, dict] = {}
    for j in range(p):
        col = chains[:, : 2 * half, j]
        if np.ptp(col) == 0.0:
            report[schema[j]] = {"ess": math.nan, "rhat": math.nan, "degenerate": True}
            continue
        z = _rank_normalize(col).reshape(2 * c, half)
        report[schema[j]] = {
            "ess": float(_ess(z)),
            "rhat": float(_split_rhat(z)),
            "degenerate": False,
        }
    return report


def diagnostics(posterior: PosteriorMatrix, chains: int = 4) -> dict:
    """Recompute R-hat/ESS on a draw matrix by treating row blocks as chains."""
    n = posterior.S // chains
    if n < 8:
        raise ParameterError("too few draws to form split chains")
    stacked = posterior.draws[: chains * n].reshape(chains, n, -1)
    return _diagnose_chains(stacked, posterior.schema)


def _thin_indices(total: int, target: int) -> np.ndarray:
    if total < target:
        raise ParameterError("cannot thin below the pooled draw count")
    return np.floor((np.arange(target) + 0.5) * total / target).astype(np.int64)


# ---------------------------------------------------------------------------
# closed-form and rejection posteriors


def sample_posterior_conjugate(
    spec: ModelSpec, data: Dataset, S: int, stream: SeedStream
) -> PosteriorMatrix:
    """Exact normal posterior for the unit-variance normal-mean model."""
    if spec.family != TOY_NORMAL:
        raise ParameterError("conjugate posterior only applies to the normal toy model")
    kind, m0, s0 = spec.priors["theta"]
    if kind != "normal":
        raise ParameterError("conjugate posterior requires a normal prior on theta")
    if data.y is None:
        raise ParameterError("dataset has no response")
    y = np.asarray(data.y, dtype=float)
    prec = 1.0 / (s0 * s0) + y.size
    var = 1.0 / prec
    mean = var * (m0 / (s0 * s0) + y.sum())
    draws = stream.rng.normal(mean, math.sqrt(var), size=(int(S), 1))
    diag = {"theta": {"ess": float(S), "rhat": 1.0, "degenerate": False}}
    return PosteriorMatrix(draws, ("theta",), diagnostics=diag, thinning=1)


def naive_rejection_posterior(
    spec: ModelSpec,
    y: np.ndarray,
    attempts: int,
    stream: SeedStream,
    batch: int = 65536,
) -> np.ndarray:
    """Exact-match rejection posterior for short binary sequences.

    Draws theta from the prior, simulates a response of the same length and
    keeps the draw only when the simulation reproduces ``y`` exactly. Returns
    the accepted draws (possibly empty -- that is a valid outcome, not an
    error). Cost grows as 2**n, hence the hard length guard.
    """
    if spec.family != TOY_BERNOULLI:
        raise ParameterError("rejection posterior only applies to the bernoulli toy model")
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ParameterError("y must be a vector")
    if y.size > 12:
        raise ParameterError("rejection sampling is limited to 12 observations")
    if attempts < 1:
        raise ParameterError("attempts must be positive")
    kind, a, b = spec.priors["theta"]
    rng = stream.rng
    accepted: list[np.ndarray] = []
    done = 0
    while done < attempts:
        m = min(batch, attempts - done)
        if kind == "beta":
            theta = rng.beta(a, b, size=m)
        elif kind == "uniform":
            theta = rng.uniform(a, b, size=m)
        else:
            raise ParameterError(f"unsupported prior kind {kind!r} for rejection")
        if y.size == 0:
            accepted.append(theta)
        else:
            sims = (rng.random(size=(m, y.size)) < theta[:, None]).astype(float)
            keep = np.all(sims == y[None, :], axis=1)
            accepted.append(theta[keep])
        done += m
    return np.concatenate(accepted) if accepted else np.empty(0)


# ---------------------------------------------------------------------------
# adaptive MCMC drivers


def _prior_vector(spec: ModelSpec, names: list[str], kinds: list[str]) -> np.ndarray:
    out = []
    for name, want in zip(names, kinds):
        kind, p1, p2 = spec.priors[name]
        if kind != want:
            raise ParameterError(
                f"sampler requires a {want} prior on {name}, got {kind}"
            )
        out.extend((p1, p2))
    return np.asarray(out, dtype=float)


def _pool_and_thin(
    chain_draws: list[np.ndarray],
    schema: tuple[str, ...],
    diag: dict,
    target_S: int,
    acceptance: dict[str, float],
) -> PosteriorMatrix:
    pooled = np.concatenate(chain_draws, axis=0)
    n_keep = chain_draws[0].shape[0]
    idx = _thin_indices(pooled.shape[0], target_S)
    diag = {name: dict(entry) for name, entry in diag.items()}
    for name in schema:
        diag[name]["acceptance"] = float(acceptance.get(name, 1.0))
    diag["_meta"] = {"pooled_draws": int(pooled.shape[0])}
    thinning = max(pooled.shape[0] // target_S, 1)
    return PosteriorMatrix(
        pooled[idx],
        schema,
        diagnostics=diag,
        thinning=thinning,
        chain_index=idx // n_keep,
        iteration_index=idx % n_keep,
    )


def _quality_gate(diag: dict, cfg: McmcConfig) -> tuple[bool, float]:
    floor = cfg.ess_floor_fraction * cfg.target_S
    worst = math.inf
    for name, entry in diag.items():
        if name.startswith("_"):
            continue
        ess = entry["ess"]
        if entry.get("degenerate") or not math.isfinite(ess):
            return False, math.nan
        worst = min(worst, ess)
    return worst >= floor, worst


def sample_posterior_cs1(
    data: Dataset,
    spec: ModelSpec,
    cfg: McmcConfig,
    stream: SeedStream,
    fault_shrink: float = 1.0,
) -> PosteriorMatrix:
    """Componentwise adaptive random-walk Metropolis for the multilevel model."""
    if spec.family != CS1:
        raise ParameterError("sampler expects the multilevel log-link family")
    if data.y is None or data.group is None:
        raise ParameterError("dataset must carry responses and group labels")
    schema = tuple(parameter_schema(spec))
    p = len(schema)
    G = spec.G

    order = np.argsort(data.group, kind="stable")
    y = np.ascontiguousarray(np.asarray(data.y, dtype=float)[order])
    x = np.ascontiguousarray(np.asarray(data.x, dtype=float)[order])
    counts = np.bincount(np.asarray(data.group)[order] - 1, minlength=G)
    starts = np.zeros(G + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])

    prior = _prior_vector(
        spec,
        ["beta0", "beta1", "sigma_gamma", "sigma"],
        ["normal", "normal", "normal_positive", "normal_positive"],
    )

    from .models import draw_prior  # local import keeps module load cheap

    post = cfg.post_warmup
    last_diag: dict = {}
    for attempt in range(cfg.max_attempts):
        n_iter = cfg.warmup + post
        chains = []
        acc_sum = np.zeros(p + 2)
        for c in range(cfg.chains):
            cstream = stream.child(f"attempt{attempt}_chain{c}")
            init = draw_prior(spec, cstream.child("init"))
            state0 = np.empty(p)
            state0[0] = init.values["beta0"]
            state0[1] = init.values["beta1"]
            for g in range(G):
                state0[2 + g] = init.values[f"gamma_{g + 1}"]
            state0[p - 2] = math.log(init.values["sigma_gamma"])
            state0[p - 1] = math.log(init.values["sigma"])
            prop = cstream.child("proposals").rng
            # Proposal slots p and p + 1 feed the joint ridge moves
            # (beta0/gamma location shift, beta1/gamma slope shift).
            normals = prop.standard_normal((n_iter, p + 2))
            unifs = prop.random((n_iter, p + 2))
            draws, acc = _kernels.cs1_chain(
                y,
                x,
                starts,
                n_iter,
                cfg.warmup,
                state0,
                prior,
                np.full(p + 2, _INIT_LOG_STEP),
                normals,
                unifs,
                cfg.rw_target_acceptance,
                float(fault_shrink),
            )
            draws = draws.copy()
            draws[:, p - 2] = np.exp(draws[:, p - 2])
            draws[:, p - 1] = np.exp(draws[:, p - 1])
            chains.append(draws)
            acc_sum += acc
        stacked = np.stack(chains)
        last_diag = _diagnose_chains(stacked, schema)
        ok, _ = _quality_gate(last_diag, cfg)
        if ok:
            acceptance = {
                schema[j]: acc_sum[j] / cfg.chains for j in range(p)
            }
            return _pool_and_thin(chains, schema, last_diag, cfg.target_S, acceptance)
        post *= 2
    raise SamplerQualityError(
        f"chain ESS below floor after {cfg.max_attempts} attempts", last_diag
    )


def sample_posterior_cs2(
    data: Dataset,
    spec: ModelSpec,
    basis,
    cfg: McmcConfig,
    stream: SeedStream,
) -> PosteriorMatrix:
    """Metropolis-within-Gibbs for the joint smooth model.

    ``basis`` must be the smooth reparameterization built on this dataset, so
    the Gibbs block sees exactly the design the quantities of interest will
    be evaluated on.
    """
    from .smooth import design_matrix  # deferred to avoid an import cycle

    if spec.family != CS2:
        raise ParameterError("sampler expects the joint smooth family")
    if data.y is None or data.z is None:
        raise ParameterError("dataset must carry responses and both covariates")
    schema = tuple(parameter_schema(spec))
    L = basis.L
    q = 3 + L

    x1, x2 = design_matrix(basis, data)
    A = np.ascontiguousarray(
        np.concatenate([np.ones((data.N, 1)), x1, x2], axis=1)
    )
    AtA = A.T @ A
    y = np.asarray(data.y, dtype=float)
    Aty = A.T @ y
    xs = np.asarray(data.x, dtype=float)
    zs = np.asarray(data.z, dtype=float)
    if np.any((xs <= 0) | (xs >= 1)) or np.any((zs <= 0) | (zs >= 1)):
        raise ParameterError("beta covariate models need x, z strictly inside (0, 1)")
    cov_sums = np.array(
        [
            np.log(xs).sum(),
            np.log1p(-xs).sum(),
            np.log(zs).sum(),
            np.log1p(-zs).sum(),
        ]
    )

    prior = _prior_vector(
        spec,
        [
            "beta0_y",
            "beta_s1",
            "beta_s2",
            "sigma_s",
            "sigma_y",
            "beta0_x",
            "phi_x",
            "beta0_z",
            "phi_z",
        ],
        [
            "normal",
            "normal",
            "normal",
            "normal_positive",
            "normal_positive",
            "normal",
            "normal_positive",
            "normal",
            "normal_positive",
        ],
    )

    from .models import draw_prior

    post = cfg.post_warmup
    last_diag: dict = {}
    for attempt in range(cfg.max_attempts):
        n_iter = cfg.warmup + post
        chains = []
        acc_sum = np.zeros(6)
        for c in range(cfg.chains):
            cstream = stream.child(f"attempt{attempt}_chain{c}")
            init = draw_prior(spec, cstream.child("init"))
            lin0 = np.empty(q)
            lin0[0] = init.values["beta0_y"]
            lin0[1] = init.values["beta_s1"]
            lin0[2] = init.values["beta_s2"]
            for l in range(L):
                lin0[3 + l] = init.values[f"b_{l + 1}"]
            scal0 = np.array(
                [
                    math.log(init.values["sigma_y"]),
                    math.log(init.values["sigma_s"]),
                    init.values["beta0_x"],
                    math.log(init.values["phi_x"]),
                    init.values["beta0_z"],
                    math.log(init.values["phi_z"]),
                ]
            )
            prop = cstream.child("proposals").rng
            normals_lin = prop.standard_normal((n_iter, q))
            normals_scal = prop.standard_normal((n_iter, 6))
            unifs_scal = prop.random((n_iter, 6))
            try:
                draws, acc = _kernels.cs2_chain(
                    y,
                    A,
                    AtA,
                    Aty,
                    cov_sums,
                    n_iter,
                    cfg.warmup,
                    lin0,
                    scal0,
                    prior,
                    np.full(6, _INIT_LOG_STEP),
                    normals_lin,
                    normals_scal,
                    unifs_scal,
                    cfg.rw_target_acceptance,
                )
            except np.linalg.LinAlgError as exc:
                raise ParameterError(
                    "normal-equations system is singular; basis appears rank-deficient"
                ) from exc
            chains.append(draws)
            acc_sum += acc
        stacked = np.stack(chains)
        last_diag = _diagnose_chains(stacked, schema)
        ok, _ = _quality_gate(last_diag, cfg)
        if ok:
            acc_mean = acc_sum / cfg.chains
            acceptance = {
                "sigma_y": acc_mean[0],
                "sigma_s": acc_mean[1],
                "beta0_x": acc_mean[2],
                "phi_x": acc_mean[3],
                "beta0_z": acc_mean[4],
                "phi_z": acc_mean[5],
            }
            return _pool_and_thin(chains, schema, last_diag, cfg.target_S, acceptance)
        post *= 2
    raise SamplerQualityError(
        f"chain ESS below floor after {cfg.max_attempts} attempts", last_diag
    )


def sample_posterior_toy_normal_mcmc(
    data: Dataset, spec: ModelSpec, cfg: McmcConfig, stream: SeedStream
) -> PosteriorMatrix:
    """Random-walk MCMC on the conjugate toy model.

    Exists to cross-check the adaptive Metropolis machinery against the
    closed-form posterior; slow path, tests only.
    """
    if spec.family != TOY_NORMAL:
        raise ParameterError("this sampler targets the normal toy model")
    if data.y is None:
        raise ParameterError("dataset has no response")
    kind, m0, s0 = spec.priors["theta"]
    if kind != "normal":
        raise ParameterError("requires a normal prior on theta")
    y = np.asarray(data.y, dtype=float)
    n_iter = cfg.warmup + cfg.post_warmup

    def logpost(theta: float) -> float:
        return -((theta - m0) ** 2) / (2 * s0 * s0) - 0.5 * np.sum((y - theta) ** 2)

    chains = []
    accept_sum = 0.0
    for c in range(cfg.chains):
        cstream = stream.child(f"chain{c}")
        theta = float(cstream.child("init").rng.normal(m0, s0))
        prop = cstream.child("proposals").rng
        normals = prop.standard_normal(n_iter)
        unifs = prop.random(n_iter)
        lstep = _INIT_LOG_STEP
        lp = logpost(theta)
        kept = np.empty((cfg.post_warmup, 1))
        acc = 0
        for t in range(n_iter):
            d = math.exp(lstep) * normals[t]
            lp_new = logpost(theta + d)
            log_alpha = lp_new - lp
            if math.log(unifs[t]) < log_alpha:
                theta += d
                lp = lp_new
                acc += 1
            if t < cfg.warmup:
                alpha = math.exp(min(0.0, log_alpha))
                lstep += (alpha - cfg.rw_target_acceptance) / (t + 1.0) ** 0.6
            else:
                kept[t - cfg.warmup, 0] = theta
        chains.append(kept)
        accept_sum += acc / n_iter
    stacked = np.stack(chains)
    diag = _diagnose_chains(stacked, ("theta",))
    ok, _ = _quality_gate(diag, cfg)
    if not ok:
        raise SamplerQualityError("toy chain failed its quality gate", diag)
    return _pool_and_thin(
        chains, ("theta",), diag, cfg.target_S, {"theta": accept_sum / cfg.chains}
    )
