"""The fitted-KPCA artifact: out-of-sample projection, primal coefficient
recovery, feature-space reconstruction error, and sparsity metrics.

Out-of-sample projection follows the kernel trick
    p(x) = k_row(x) @ H @ U' diag(lam)^(-1/2) U
with (U, lam) the eigendecomposition of H'GH, which needs every lam above the
positivity floor. Models serialize as a one-line JSON header followed by a CSV
payload of H; the training data itself is replaced by a fingerprint and must
be re-supplied for projection.
"""

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from . import kernels
from .data_io import Dataset
from .dual_core import SINGULARITY_FLOOR_SCALE, SpectralDecomp, sym_eig_small
from .errors import DataError, KpcaError, UnprojectableModelError
from .objectives import ObjectiveSpec, format_objective, kappa_max, parse_objective
from .solvers import SolveConfig, SolveReport, dca_solve, lbfgs_solve

MODEL_FORMAT = "dckpca-model/1"


@dataclass(frozen=True)
class KpcaModel:
    kernel_spec: kernels.KernelSpec
    objective: ObjectiveSpec
    s: int
    H: np.ndarray
    decomp: SpectralDecomp
    stats: kernels.CenteringStats
    fingerprint: str
    train_data: Dataset | None = None
    report: SolveReport | None = None
    kappa_max_value: float | None = None

    @property
    def n(self) -> int:
        return self.H.shape[0]


def dataset_fingerprint(dataset: Dataset) -> str:
    """sha256 over shape and canonical value bytes (labels excluded)."""
    h = hashlib.sha256()
    h.update(np.asarray(dataset.values.shape, dtype=np.int64).tobytes())
    if dataset.is_sparse:
        m = dataset.values.tocsr()
        h.update(np.asarray(m.indptr, dtype=np.int64).tobytes())
        h.update(np.asarray(m.indices, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(m.data, dtype=np.float64).tobytes())
    else:
        h.update(np.ascontiguousarray(dataset.values, dtype=np.float64).tobytes())
    return h.hexdigest()


def gram_fingerprint(gm: kernels.GramMatrix) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(gm.entries.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(gm.entries, dtype=np.float64).tobytes())
    return h.hexdigest()


def _final_decomp(G, H) -> SpectralDecomp:
    M = H.T @ (G @ H)
    dec = sym_eig_small(0.5 * (M + M.T))
    floor = SINGULARITY_FLOOR_SCALE * max(float(dec.lam[0]), 1.0)
    if float(dec.lam[-1]) <= floor:
        raise UnprojectableModelError(
            f"H'GH eigenvalue {dec.lam[-1]:.6e} at or below floor {floor:.6e}: "
            "the fitted model cannot project")
    return dec


def fit(dataset: Dataset | None, kernel_spec: kernels.KernelSpec,
        objective: ObjectiveSpec, s: int, config: SolveConfig | None = None,
        solver: str = "auto", jitter: bool = False,
        gram_matrix: kernels.GramMatrix | None = None) -> KpcaModel:
    """Fit KPCA by solving the dual problem.

    The square objective goes to L-BFGS (or DCA when ``solver='dca'``), every
    Moreau-envelope objective to DCA. An unresolved ``xmax`` radius triggers a
    square-loss pre-solve to measure kappa_max. ``gram_matrix`` short-circuits
    kernel assembly for precomputed Grams (``dataset`` may then be None).
    """
    cfg = config or SolveConfig()
    if solver not in ("auto", "lbfgs", "dca"):
        raise KpcaError(f"unknown solver {solver!r}")
    if gram_matrix is not None:
        if dataset is not None and gram_matrix.n != dataset.n:
            raise DataError("precomputed Gram size does not match dataset")
        spec = kernel_spec
        G_raw = gram_matrix
        fingerprint = gram_fingerprint(gram_matrix)
    else:
        if dataset is None:
            raise DataError("fit needs a dataset or a precomputed Gram")
        spec = kernel_spec.resolve(dataset)
        G_raw = kernels.gram(dataset, spec)
        fingerprint = dataset_fingerprint(dataset)
    Gc = kernels.center_gram(G_raw) if not G_raw.centered else G_raw
    if jitter:
        Gc = kernels.add_jitter(Gc)

    kappa_max_value = None
    if not objective.resolved:
        H_sq, _ = _dispatch("square", ObjectiveSpec("square"), Gc, s, cfg, solver)
        kappa_max_value = kappa_max(objective.kind, H_sq.H)
        objective = objective.resolve(kappa_max_value)

    kind = "square" if objective.kind == "square" else "envelope"
    dual, report = _dispatch(kind, objective, Gc, s, cfg, solver)
    return assemble_model(Gc, spec, objective, s, dual.H, dataset,
                          fingerprint=fingerprint, report=report,
                          kappa_max_value=kappa_max_value)


def assemble_model(Gc: kernels.GramMatrix, spec: kernels.KernelSpec,
                   objective: ObjectiveSpec, s: int, H: np.ndarray,
                   dataset: Dataset | None, fingerprint: str | None = None,
                   report: SolveReport | None = None,
                   kappa_max_value: float | None = None) -> KpcaModel:
    """Wrap a solved dual variable into a projectable model (spectral factors
    of H'GH, centering stats, fingerprint). Raises when H'GH is singular."""
    dec = _final_decomp(Gc.entries, H)
    if fingerprint is None:
        fingerprint = dataset_fingerprint(dataset) if dataset is not None \
            else gram_fingerprint(Gc)
    stats = Gc.stats if Gc.stats is not None else \
        kernels.CenteringStats(np.zeros(Gc.n), 0.0)
    return KpcaModel(kernel_spec=spec, objective=objective, s=s, H=H, decomp=dec,
                     stats=stats, fingerprint=fingerprint, train_data=dataset,
                     report=report, kappa_max_value=kappa_max_value)


def _dispatch(kind, objective, Gc, s, cfg, solver):
    if kind == "square" and solver != "dca":
        return lbfgs_solve(Gc, s, cfg)
    return dca_solve(Gc, s, objective, cfg)


def recover_primal_coefficients(model: KpcaModel) -> np.ndarray:
    """Coefficients A with w_j = sum_i A_ij phi(x_i): A = H U' diag(lam)^(-1/2) U.
    Satisfies A'GA = I_s (orthonormal directions in feature space)."""
    return model.H @ model.decomp.apply(lambda lam: 1.0 / np.sqrt(lam))


def project(model: KpcaModel, X) -> np.ndarray:
    """Principal-component projections of query rows (m x s, or (s,) for a
    single vector x)."""
    if model.train_data is None:
        raise KpcaError("model has no training data attached; call attach_training_data")
    if model.kernel_spec.family == "precomputed":
        raise KpcaError("precomputed-kernel models cannot project new points")
    single = not sparse.issparse(X) and np.asarray(X).ndim == 1
    rows = kernels.kernel_rows(model.kernel_spec, model.train_data, model.stats, X)
    P = rows @ recover_primal_coefficients(model)
    return P[0] if single else P


def reconstruction_error(model: KpcaModel, dataset: Dataset) -> float:
    """Mean feature-space reconstruction error over the dataset:
    mean_x max(0, k~(x,x) - ||p(x)||^2), the squared distance from the centered
    feature map to its projection onto the fitted components."""
    P = project(model, dataset.values)
    self_k = kernels.centered_self_kernel(
        model.kernel_spec, model.train_data, model.stats, dataset.values)
    residual = np.maximum(self_k - np.einsum("ij,ij->i", P, P), 0.0)
    return float(residual.mean())


def sparsity_metrics(H: np.ndarray, rel_tol: float = 1e-9) -> dict:
    """Percentages of zero entries and all-zero rows of H, where an entry
    counts as zero when |h| < rel_tol * max|H|. All-zero H is 100/100."""
    H = np.asarray(H, dtype=float)
    scale = float(np.max(np.abs(H)))
    if scale == 0.0:
        return {"zero_rows_pct": 100.0, "zero_entries_pct": 100.0}
    zero = np.abs(H) < rel_tol * scale
    return {
        "zero_rows_pct": 100.0 * float(np.mean(zero.all(axis=1))),
        "zero_entries_pct": 100.0 * float(np.mean(zero)),
    }


def save_model(model: KpcaModel, path) -> None:
    """One JSON header line, then the n x s payload of H as CSV rows."""
    header = {
        "format": MODEL_FORMAT,
        "kernel": {"family": model.kernel_spec.family,
                   "sigma": model.kernel_spec.sigma},
        "objective": format_objective(model.objective),
        "s": model.s,
        "n": model.n,
        "fingerprint": model.fingerprint,
        "lam": model.decomp.lam.tolist(),
        "U": model.decomp.U.ravel().tolist(),
        "col_means": model.stats.col_means.tolist(),
        "grand_mean": model.stats.grand_mean,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for row in model.H:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_model(path) -> KpcaModel:
    """Inverse of save_model. The returned model has no training data attached;
    use attach_training_data before projecting."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != MODEL_FORMAT:
            raise DataError(f"unrecognized model format {header.get('format')!r}")
        H = np.loadtxt(fh, delimiter=",", ndmin=2, dtype=float)
    s = int(header["s"])
    if H.shape != (int(header["n"]), s):
        raise DataError("model payload shape does not match header")
    fam = header["kernel"]["family"]
    sigma = header["kernel"]["sigma"]
    spec = kernels.KernelSpec(fam, sigma if fam in ("gaussian", "laplace") else None)
    dec = SpectralDecomp(np.asarray(header["U"], dtype=float).reshape(s, s),
                         np.asarray(header["lam"], dtype=float))
    stats = kernels.CenteringStats(np.asarray(header["col_means"], dtype=float),
                                   float(header["grand_mean"]))
    return KpcaModel(
        kernel_spec=spec, objective=parse_objective(header["objective"]),
        s=s, H=H, decomp=dec, stats=stats, fingerprint=header["fingerprint"])


def attach_training_data(model: KpcaModel, dataset: Dataset) -> KpcaModel:
    """Re-attach training data to a loaded model, checked by fingerprint."""
    fp = dataset_fingerprint(dataset)
    if fp != model.fingerprint:
        raise DataError("training data fingerprint does not match the model")
    return replace(model, train_data=dataset)
