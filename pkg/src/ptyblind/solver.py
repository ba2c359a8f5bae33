"""Blind reconstruction updates and the outer alternating loop.

The solver alternates three steps: a least-squares object update from
the current frames and probe, a probe update (one of four modes), and
a frame update that re-imposes the measured Fourier magnitudes on the
model frames. Probe modes:

``standard``
    Per-pixel least squares of the probe against the extracted object
    views, averaged over frames.
``power``
    One step of a power iteration that minimizes the pairwise
    discrepancy quadratic form between overlapping frames, treating
    the probe as the unknown.
``rank1_global`` / ``rank1_framewise``
    The power step applied after subtracting the estimated average
    transmitted component (a single complex transparency factor, or
    one factor per overlapping-frame neighborhood) from the frames.
    Removing that near-constant part enlarges the spectral gap the
    power step sees, which is what accelerates weak-contrast
    reconstructions.

The shifted step divides by the small residual contrast, so it
amplifies whatever frame inconsistency the magnitude projection left
behind; applied unconditionally it is violently unstable early in a
run. The loop therefore schedules it: a shifted step is taken only
when :func:`shift_consistency` certifies the shifted stack is close
to self-consistent (``rank1_gate``) and at most every
``rank1_cadence`` iterations, with plain power steps consolidating in
between. After each shifted step the object is recomputed with the
new probe before the frames are rebuilt, so the jump is absorbed
instead of being undone by the next consolidation steps. Both
branches leave an exact solution fixed.

Denominators are floored at ``epsilon_rel`` times their maximum, so
division is scale-free and uncovered pixels map to zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fourier import check_amplitudes, frame_dft, frame_idft, spectrum_phase, magnitude_project
from .metrics import MetricsRow, nrmse_probe
from .operators import (
    CoverageMaps,
    ScanGeometry,
    coverage_maps,
    embed_add_frames,
    extract_frames,
    illuminate,
    illuminate_adjoint,
    replicate_probe,
    sum_frames,
)

PROBE_MODES = ("standard", "power", "rank1_global", "rank1_framewise")

# Relative frame-stack norm below which a transparency-shifted stack is
# treated as pure transparency (a constant object carries no probe
# information).
RANK1_DEGENERACY_RTOL = 1e-12


class DegenerateInputError(ValueError):
    """The input carries no usable signal for the requested update."""


FRAME_INITS = ("transparent", "random_phase")


@dataclass
class SolverConfig:
    """Knobs for :func:`run_reconstruction` and the update operations.

    ``rank1_gate`` and ``rank1_cadence`` schedule the transparency-
    shifted probe step in the rank-1 modes: the shift engages only
    when the consistency score of the shifted stack reaches the gate,
    and at most once per cadence iterations; plain power steps run in
    between. ``frame_init`` picks the starting frames when none are
    supplied: ``"transparent"`` illuminates a unit object and imposes
    the measured magnitudes (deterministic, suited to weak-contrast
    objects), ``"random_phase"`` pairs the magnitudes with seeded
    random phases.
    """

    epsilon_rel: float = 1e-8
    max_iters: int = 100
    probe_mode: str = "standard"
    center_probe_each_iter: bool = True
    stop_nrmse: Optional[float] = None
    probe_norm_lock: bool = True
    init_seed: int = 0
    frame_init: str = "transparent"
    rank1_gate: float = 0.95
    rank1_cadence: int = 3

    def __post_init__(self) -> None:
        if self.epsilon_rel <= 0:
            raise ValueError(f"epsilon_rel must be > 0, got {self.epsilon_rel}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.probe_mode not in PROBE_MODES:
            raise ValueError(f"probe_mode must be one of {PROBE_MODES}, got {self.probe_mode!r}")
        if self.frame_init not in FRAME_INITS:
            raise ValueError(f"frame_init must be one of {FRAME_INITS}, got {self.frame_init!r}")
        if not 0.0 <= self.rank1_gate <= 1.0:
            raise ValueError(f"rank1_gate must be in [0, 1], got {self.rank1_gate}")
        if self.rank1_cadence < 1:
            raise ValueError(f"rank1_cadence must be >= 1, got {self.rank1_cadence}")


@dataclass
class TransparencyEstimate:
    """Estimated average transmitted component of the object.

    ``global_factor`` is the single complex transparency; when
    ``framewise_factors`` (length K) is present the rank-1 update uses
    one factor per frame instead.
    """

    global_factor: complex
    framewise_factors: Optional[np.ndarray] = None


@dataclass
class History:
    """Outcome of a reconstruction run: metric rows plus final state."""

    rows: list[MetricsRow] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    probe: Optional[np.ndarray] = None
    object_image: Optional[np.ndarray] = None
    frames: Optional[np.ndarray] = None


def _floored(denominator: np.ndarray, epsilon_rel: float) -> np.ndarray:
    peak = denominator.max()
    if not peak > 0:
        raise DegenerateInputError("denominator is identically zero")
    return np.maximum(denominator, epsilon_rel * peak)


def update_object(
    frames: np.ndarray,
    probe: np.ndarray,
    geom: ScanGeometry,
    cfg: SolverConfig,
    cov: Optional[CoverageMaps] = None,
) -> np.ndarray:
    """Least-squares object estimate from a frame stack and probe.

    Conjugate-probe weighted scatter-add divided by the illumination
    coverage; pixels no frame covers come out zero.
    """
    if cov is None:
        cov = coverage_maps(probe, geom)
    if not cov.object_coverage.max() > 0:
        raise ValueError("probe is identically zero: object coverage vanishes")
    num = illuminate_adjoint(frames, probe, geom)
    return num / _floored(cov.object_coverage, cfg.epsilon_rel)


def update_probe_standard(
    frames: np.ndarray,
    obj: np.ndarray,
    geom: ScanGeometry,
    cfg: SolverConfig,
) -> np.ndarray:
    """Per-pixel least-squares probe given the object: frame-averaged
    conjugate-view weighting over the summed view intensities."""
    views = extract_frames(obj, geom)
    den = sum_frames(np.abs(views) ** 2)
    if not den.max() > 0:
        raise ValueError("object is identically zero: probe update undefined")
    num = sum_frames(np.conj(views) * np.asarray(frames))
    return num / _floored(den, cfg.epsilon_rel)


def update_frames(
    amplitudes: np.ndarray,
    probe: np.ndarray,
    obj: np.ndarray,
    geom: ScanGeometry,
) -> np.ndarray:
    """Model frames from (object, probe) with measured magnitudes imposed."""
    return magnitude_project(illuminate(obj, probe, geom), amplitudes)


def frame_consistency_project(
    frames: np.ndarray,
    probe: np.ndarray,
    geom: ScanGeometry,
    cfg: SolverConfig,
    cov: Optional[CoverageMaps] = None,
) -> np.ndarray:
    """Project a frame stack onto the set consistent with one object.

    Averages the frames into the object domain (coverage-weighted) and
    re-illuminates; fixed points are exactly the stacks a single
    object can produce under the current probe.
    """
    return illuminate(update_object(frames, probe, geom, cfg, cov=cov), probe, geom)


def pairwise_discrepancy(
    frames: np.ndarray,
    probe: np.ndarray,
    geom: ScanGeometry,
    cov: Optional[CoverageMaps] = None,
) -> float:
    """Mutual inconsistency of overlapping frames under the probe.

    Sum over frame pairs of the squared mismatch between each frame
    re-illuminated at the other's position; zero exactly when the
    stack comes from a single object. Evaluated matrix-free as the
    coverage-weighted stack energy minus the energy of the adjoint
    accumulation, clamped at zero against rounding.
    """
    if cov is None:
        cov = coverage_maps(probe, geom)
    frames = np.asarray(frames)
    weighted = float(np.vdot(frames, cov.frame_coverage * frames).real)
    acc = illuminate_adjoint(frames, probe, geom)
    return max(weighted - float(np.vdot(acc, acc).real), 0.0)


def update_probe_power(
    frames: np.ndarray,
    probe: np.ndarray,
    geom: ScanGeometry,
    cfg: SolverConfig,
) -> np.ndarray:
    """One power step on the pairwise-discrepancy quadratic form.

    With the frames fixed, the discrepancy is a Hermitian form in the
    probe whose kernel (for consistent frames) is the true probe
    direction; the preconditioned power step drives the iterate toward
    it. Numerator: frames times the re-extracted conjugate adjoint
    accumulation, summed over frames. Denominator: frame-overlap
    coverage of the stack intensity.
    """
    frames = np.asarray(frames)
    den = sum_frames(extract_frames(embed_add_frames(np.abs(frames) ** 2, geom), geom))
    if not den.max() > 0:
        raise DegenerateInputError("frame stack is identically zero: power update undefined")
    acc = illuminate_adjoint(frames, probe, geom)
    num = sum_frames(frames * extract_frames(np.conj(acc), geom))
    return num / _floored(den, cfg.epsilon_rel)


def transparency_global(frames: np.ndarray, probe: np.ndarray) -> complex:
    """Average complex transmission of the frames relative to the probe."""
    frames = np.asarray(frames)
    probe = np.asarray(probe)
    probe_sq = np.vdot(probe, probe).real
    if probe_sq == 0.0:
        raise ValueError("probe is identically zero")
    return complex(np.vdot(probe, sum_frames(frames)) / (frames.shape[0] * probe_sq))


def transparency_framewise(
    frames: np.ndarray,
    probe: np.ndarray,
    overlap: np.ndarray,
) -> np.ndarray:
    """Per-frame transparency averaged over each overlap neighborhood.

    ``overlap`` is the K x K binary symmetric matrix marking frame
    pairs that share object pixels (diagonal included).
    """
    frames = np.asarray(frames)
    probe = np.asarray(probe)
    probe_sq = np.vdot(probe, probe).real
    if probe_sq == 0.0:
        raise ValueError("probe is identically zero")
    overlap = np.asarray(overlap, dtype=np.float64)
    per_frame = np.tensordot(np.conj(probe), frames, axes=([0, 1], [1, 2]))
    return (overlap @ per_frame) / (probe_sq * overlap.sum(axis=1))


def build_overlap_matrix(geom: ScanGeometry) -> np.ndarray:
    """K x K binary matrix of frame pairs sharing at least one pixel."""
    def axis_overlap(offsets: np.ndarray) -> np.ndarray:
        d = np.mod(offsets[:, None] - offsets[None, :], geom.n)
        return (d <= geom.m - 1) | (d >= geom.n - geom.m + 1)

    rows = axis_overlap(geom.positions[:, 0])
    cols = axis_overlap(geom.positions[:, 1])
    return (rows & cols).astype(np.uint8)


def _shift_factors(geom: ScanGeometry, estimate: TransparencyEstimate) -> np.ndarray:
    if estimate.framewise_factors is not None:
        factors = np.asarray(estimate.framewise_factors, dtype=np.complex128)
        if factors.shape != (geom.K,):
            raise ValueError(
                f"framewise transparency must have length K={geom.K}, got shape {factors.shape}"
            )
        return factors
    return np.full(geom.K, complex(estimate.global_factor), dtype=np.complex128)


def _check_rank1_degeneracy(frames: np.ndarray, shifted: np.ndarray) -> None:
    if np.linalg.norm(shifted) <= RANK1_DEGENERACY_RTOL * np.linalg.norm(frames):
        raise DegenerateInputError(
            "transparency shift removed the whole stack: constant object region"
        )


def _rank1_terms(
    frames: np.ndarray,
    shifted: np.ndarray,
    probe: np.ndarray,
    geom: ScanGeometry,
    factors: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and denominator of the transparency-shifted power
    step: each frame is handled by the uniform-shift formula at its own
    factor, assembled from three shared scatter-adds. Each frame's
    denominator term is a nonnegative coverage of a shifted stack;
    tiny negative rounding is clamped.
    """
    fcol = factors[:, None, None]
    adjoint_view = extract_frames(illuminate_adjoint(frames, probe, geom), geom)
    stack_cov = extract_frames(embed_add_frames(np.abs(frames) ** 2, geom), geom)
    frame_cov = coverage_maps(probe, geom).frame_coverage
    num = sum_frames(shifted * (np.conj(adjoint_view) - np.conj(fcol) * frame_cov))
    den = sum_frames(
        stack_cov
        - 2.0 * np.real(np.conj(fcol) * adjoint_view)
        + np.abs(fcol) ** 2 * frame_cov
    )
    return num, np.maximum(den, 0.0)


def _rank1_distributed(
    frames: np.ndarray,
    shifted: np.ndarray,
    probe: np.ndarray,
    geom: ScanGeometry,
    factors: np.ndarray,
    cfg: SolverConfig,
) -> np.ndarray:
    num, den = _rank1_terms(frames, shifted, probe, geom, factors)
    if not den.max() > 0:
        raise DegenerateInputError("shifted frame stack is identically zero")
    return num / _floored(den, cfg.epsilon_rel)


def shift_consistency(
    frames: np.ndarray,
    probe: np.ndarray,
    geom: ScanGeometry,
    estimate: TransparencyEstimate,
) -> float:
    """Consistency score of the transparency-shifted stack along the
    current probe.

    This is the ratio of the shifted power step's quadratic form to
    its coverage-weighted norm at the current probe. It equals 1
    exactly when the shifted frames are mutually consistent (come from
    a single object under this probe) and drops toward 0 as the shift
    residue is dominated by frame inconsistency; a degenerate (zero)
    shifted stack scores 0. With a single global factor the score is
    confined to [0, 1] up to rounding; with per-frame factors it can
    overshoot 1 slightly because each frame is scored against its own
    shifted stack. The solver uses it to decide when the shifted step
    can be trusted; whether the shift left enough signal to act on is
    the update's own degeneracy check, not this score.
    """
    frames = np.asarray(frames)
    probe = np.asarray(probe)
    factors = _shift_factors(geom, estimate)
    shifted = frames - factors[:, None, None] * probe[None, :, :]
    if estimate.framewise_factors is None:
        # Evaluate the pencil on the shifted stack itself: the
        # distributed three-term form cancels catastrophically when
        # the shift residue sits many orders below the stack, scoring
        # a perfectly transparent region as junk instead of as
        # consistent.
        den = sum_frames(extract_frames(embed_add_frames(np.abs(shifted) ** 2, geom), geom))
        acc = illuminate_adjoint(shifted, probe, geom)
        num = sum_frames(shifted * extract_frames(np.conj(acc), geom))
    else:
        num, den = _rank1_terms(frames, shifted, probe, geom, factors)
    weight = float((den * np.abs(probe) ** 2).sum())
    if not weight > 0.0:
        return 0.0
    return float(np.vdot(probe, num).real / weight)


def update_probe_rank1(
    frames: np.ndarray,
    probe: np.ndarray,
    geom: ScanGeometry,
    estimate: TransparencyEstimate,
    cfg: SolverConfig,
) -> np.ndarray:
    """Transparency-accelerated probe update.

    Subtracts the estimated transmitted component from the stack and
    applies the power step to the remainder. With a single global
    factor the shifted stack is still consistent data, so this is
    literally the power update of the shifted stack. With per-frame
    factors each frame is treated by the uniform-shift formula at its
    own factor (the frame's factor multiplies the full coverage map);
    shifting frames by different constants and taking the plain power
    step instead would break the true-probe fixed point, because such
    a stack no longer comes from any single object.

    Raises :class:`DegenerateInputError` when the shifted stack is
    numerically zero (a purely constant object region carries no
    probe information), in which case callers may fall back to the
    plain power update.
    """
    frames = np.asarray(frames)
    probe = np.asarray(probe)
    factors = _shift_factors(geom, estimate)
    shifted = frames - factors[:, None, None] * probe[None, :, :]
    _check_rank1_degeneracy(frames, shifted)
    if estimate.framewise_factors is None:
        return update_probe_power(shifted, probe, geom, cfg)
    return _rank1_distributed(frames, shifted, probe, geom, factors, cfg)


def update_probe_rank1_expanded(
    frames: np.ndarray,
    probe: np.ndarray,
    geom: ScanGeometry,
    estimate: TransparencyEstimate,
    cfg: SolverConfig,
) -> np.ndarray:
    """Cross-check evaluation of :func:`update_probe_rank1` by the
    complementary arithmetic route.

    Global factor: the transparency terms are distributed through the
    numerator and denominator instead of shifting the stack first.
    Per-frame factors: each frame's contribution is recomputed from an
    explicitly shifted stack (one uniform shift per frame), the
    un-distributed form of the same update. Either way the result must
    match the production path to rounding; tests assert it.
    """
    frames = np.asarray(frames)
    probe = np.asarray(probe)
    factors = _shift_factors(geom, estimate)
    shifted = frames - factors[:, None, None] * probe[None, :, :]
    _check_rank1_degeneracy(frames, shifted)
    if estimate.framewise_factors is None:
        return _rank1_distributed(frames, shifted, probe, geom, factors, cfg)

    num = np.zeros((geom.m, geom.m), dtype=np.complex128)
    den = np.zeros((geom.m, geom.m), dtype=np.float64)
    for i in range(geom.K):
        uniform = frames - factors[i] * probe[None, :, :]
        acc = illuminate_adjoint(uniform, probe, geom)
        num += uniform[i] * extract_frames(np.conj(acc), geom)[i]
        den += extract_frames(embed_add_frames(np.abs(uniform) ** 2, geom), geom)[i]
    if not den.max() > 0:
        raise DegenerateInputError("shifted frame stack is identically zero")
    return num / _floored(den, cfg.epsilon_rel)


def center_probe(probe: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Circularly shift a probe so its intensity center of mass sits at
    the frame center ((m-1)/2 per axis), within one pixel.

    The center of mass is the circular (first-harmonic) mean of the
    intensity along each axis, which stays well defined when the blob
    wraps around the frame edge. Returns the shifted probe and the
    integer (row, col) shift applied.
    """
    probe = np.asarray(probe)
    intensity = np.abs(probe) ** 2
    total = intensity.sum()
    if total == 0.0:
        raise ValueError("cannot center an identically zero probe")
    m = probe.shape[0]
    target = (m - 1) / 2.0
    shift = np.zeros(2, dtype=np.int64)
    for axis in range(2):
        marginal = intensity.sum(axis=1 - axis)
        harmonic = np.sum(marginal * np.exp(2j * np.pi * np.arange(m) / m))
        if abs(harmonic) < 1e-12 * total:
            continue  # balanced mass: center undefined, leave axis alone
        com = (np.angle(harmonic) * m / (2.0 * np.pi)) % m
        delta = (target - com + m / 2.0) % m - m / 2.0
        shift[axis] = int(np.round(delta))
    return np.roll(probe, tuple(shift), axis=(0, 1)), shift


def _random_phase_frames(amplitudes: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    phases = np.exp(2j * np.pi * rng.random(amplitudes.shape))
    return frame_idft(amplitudes * phases)


def _transparent_frames(
    amplitudes: np.ndarray, probe: np.ndarray, geom: ScanGeometry
) -> np.ndarray:
    """Frames of a unit object under the initial probe, with the
    measured magnitudes imposed."""
    ones = np.ones((geom.n, geom.n), dtype=np.complex128)
    spectra = frame_dft(illuminate(ones, probe, geom))
    return frame_idft(spectrum_phase(spectra) * amplitudes)


def _probe_step(
    frames: np.ndarray,
    probe: np.ndarray,
    obj: np.ndarray,
    geom: ScanGeometry,
    cfg: SolverConfig,
    overlap: Optional[np.ndarray],
    iteration: int,
    events: list[str],
    since_shift: int,
    shift_seen: bool,
) -> tuple[np.ndarray, int, bool]:
    """One probe update per ``cfg.probe_mode``.

    Returns the new probe, the updated count of iterations since the
    last transparency-shifted step, and whether this step was shifted.
    """
    if cfg.probe_mode == "standard":
        return update_probe_standard(frames, obj, geom, cfg), since_shift, False
    if cfg.probe_mode == "power":
        return update_probe_power(frames, probe, geom, cfg), since_shift, False
    estimate = TransparencyEstimate(global_factor=transparency_global(frames, probe))
    if cfg.probe_mode == "rank1_framewise":
        estimate.framewise_factors = transparency_framewise(frames, probe, overlap)
    if since_shift >= cfg.rank1_cadence:
        score = shift_consistency(frames, probe, geom, estimate)
        if score >= cfg.rank1_gate:
            try:
                shifted = update_probe_rank1(frames, probe, geom, estimate, cfg)
            except DegenerateInputError:
                events.append(
                    f"iteration {iteration}: degenerate transparency shift, "
                    "fell back to power update"
                )
                return update_probe_power(frames, probe, geom, cfg), since_shift + 1, False
            if not shift_seen:
                events.append(
                    f"iteration {iteration}: transparency shift engaged "
                    f"(consistency {score:.3f})"
                )
            return shifted, 0, True
    return update_probe_power(frames, probe, geom, cfg), since_shift + 1, False


def run_reconstruction(
    amplitudes: np.ndarray,
    geom: ScanGeometry,
    probe_init: np.ndarray,
    cfg: SolverConfig,
    probe_true: Optional[np.ndarray] = None,
    frames_init: Optional[np.ndarray] = None,
) -> History:
    """Alternating blind reconstruction from diffraction amplitudes.

    Each outer iteration updates the object, then the probe (per
    ``cfg.probe_mode``), optionally recenters the probe (jointly
    rolling the object, which preserves the data fit) and locks its
    norm, and finally rebuilds the frames from the model with measured
    magnitudes imposed. In the rank-1 modes the transparency-shifted
    step runs on the gate-and-cadence schedule described in the module
    docstring, and after a shifted step the object is recomputed with
    the new probe before the frames are rebuilt. Metrics are recorded
    every iteration; row 0 describes the initial state. The recorded
    data residual is the model feasibility gap: the relative distance
    between the measured amplitudes and the magnitudes the current
    (object, probe) pair predicts (at row 0, the object implied by the
    initial frames). The frames themselves always satisfy the
    magnitude constraint after the frame update, so their own gap
    would be vacuous.

    ``frames_init`` overrides the ``cfg.frame_init`` start.
    ``stop_nrmse`` halts the run at the first iteration whose probe
    error reaches the threshold and requires ``probe_true``.
    """
    amplitudes = check_amplitudes(amplitudes)
    if amplitudes.shape != (geom.K, geom.m, geom.m):
        raise ValueError(
            f"amplitudes shape {amplitudes.shape} does not match geometry "
            f"(K={geom.K}, m={geom.m})"
        )
    probe = np.array(probe_init, dtype=np.complex128)
    if probe.shape != (geom.m, geom.m):
        raise ValueError(f"probe shape {probe.shape} does not match geometry m={geom.m}")
    norm_lock_target = np.linalg.norm(probe)
    if norm_lock_target == 0.0:
        raise ValueError("initial probe is identically zero")
    if cfg.stop_nrmse is not None and probe_true is None:
        raise ValueError("stop_nrmse requires the true probe")

    if frames_init is None:
        if cfg.frame_init == "transparent":
            frames = _transparent_frames(amplitudes, probe, geom)
        else:
            frames = _random_phase_frames(amplitudes, cfg.init_seed)
    else:
        frames = np.array(frames_init, dtype=np.complex128)
        if frames.shape != amplitudes.shape:
            raise ValueError(f"frames_init shape {frames.shape} does not match data")

    overlap = build_overlap_matrix(geom) if cfg.probe_mode == "rank1_framewise" else None
    history = History()
    t_start = time.perf_counter()
    cov = coverage_maps(probe, geom)

    def record(iteration: int, resid: float, t0: float) -> Optional[float]:
        err = nrmse_probe(probe, probe_true) if probe_true is not None else None
        history.rows.append(
            MetricsRow(
                iter=iteration,
                nrmse_probe=err,
                data_residual=resid,
                pairwise=pairwise_discrepancy(frames, probe, geom, cov=cov),
                wall_ms=(time.perf_counter() - t0) * 1000.0,
            )
        )
        return err

    amp_norm = np.linalg.norm(amplitudes)

    def model_gap(spectra: np.ndarray) -> float:
        gap = np.linalg.norm(np.abs(spectra) - amplitudes)
        if amp_norm > 0:
            return float(gap / amp_norm)
        return 0.0 if gap == 0.0 else float("inf")

    obj = update_object(frames, probe, geom, cfg, cov=cov)
    err = record(0, model_gap(frame_dft(illuminate(obj, probe, geom))), t_start)
    stop = cfg.stop_nrmse is not None and err is not None and err <= cfg.stop_nrmse
    since_shift = cfg.rank1_cadence
    shift_seen = False
    for iteration in range(1, cfg.max_iters + 1):
        if stop:
            break
        t0 = time.perf_counter()
        try:
            obj = update_object(frames, probe, geom, cfg, cov=cov)
            probe, since_shift, engaged = _probe_step(
                frames, probe, obj, geom, cfg, overlap, iteration,
                history.events, since_shift, shift_seen,
            )
            shift_seen = shift_seen or engaged
            if cfg.center_probe_each_iter:
                probe, shift = center_probe(probe)
                if shift.any():
                    obj = np.roll(obj, tuple(shift), axis=(0, 1))
            if cfg.probe_norm_lock:
                norm = np.linalg.norm(probe)
                if norm == 0.0:
                    raise ValueError("probe update collapsed to zero")
                probe *= norm_lock_target / norm
            cov = coverage_maps(probe, geom)
            if engaged:
                # A shifted step can move the probe far; re-fit the
                # object before rebuilding the frames so the jump is
                # kept instead of being averaged away.
                obj = update_object(frames, probe, geom, cfg, cov=cov)
            # Fused frame update: reuse the model spectra for the data
            # residual instead of transforming twice.
            spectra = frame_dft(illuminate(obj, probe, geom))
            resid = model_gap(spectra)
            frames = frame_idft(spectrum_phase(spectra) * amplitudes)
        except ValueError as exc:
            raise type(exc)(f"iteration {iteration}: {exc}") from exc
        err = record(iteration, resid, t0)
        stop = cfg.stop_nrmse is not None and err is not None and err <= cfg.stop_nrmse

    history.probe = probe
    history.object_image = obj
    history.frames = frames
    return history
