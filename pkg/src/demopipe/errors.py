"""Exception hierarchy for the demopipe package.

Exceptions carry enough context to diagnose a failure without re-running
the stage that raised it; pipeline stages wrap lower-level errors in
StageError so a processing failure names the stage it came from.
"""

from __future__ import annotations


class DemopipeError(Exception):
    """Base class for all package-specific errors."""


# --- geometry ---------------------------------------------------------------

class HandednessMismatch(DemopipeError):
    """Two transforms of different chirality were combined."""


class AlreadyRightHanded(DemopipeError):
    """Handedness conversion applied to a transform that is already right-handed."""


class BehindCamera(DemopipeError):
    """A point with non-positive depth was projected."""


class RayParallelToPlane(DemopipeError):
    """Back-projection ray is (numerically) parallel to the target plane."""


class PointBehindCamera(DemopipeError):
    """Plane intersection solved to a non-positive depth."""


# --- fiducial / PnP ---------------------------------------------------------

class DegenerateCorners(DemopipeError):
    """Corner correspondences are collinear or otherwise rank-deficient."""


class PnPAmbiguous(DemopipeError):
    """Both planar-PnP solutions explain the corners about equally well.

    Carries both candidate poses as ``solutions`` (list of RigidTransform)
    and their reprojection RMS values as ``residuals``.
    """

    def __init__(self, message, solutions, residuals):
        super().__init__(message)
        self.solutions = solutions
        self.residuals = residuals


class NoMarker(DemopipeError):
    """No dictionary marker found in the frame."""


class UnknownId(DemopipeError):
    """Detected marker id has no codebook entry."""


# --- tactile reconstruction -------------------------------------------------

class NoEdges(DemopipeError):
    """Edge extraction found no usable edge structure."""


class OneEdgeOnly(DemopipeError):
    """Only one contact face's edge was found.

    The partial result is attached as ``observations``.
    """

    def __init__(self, message, observations):
        super().__init__(message)
        self.observations = observations


class DegenerateContour(DemopipeError):
    """Contour is collinear; no quadrilateral can be fitted."""


class DegenerateConfiguration(DemopipeError):
    """PnP correspondences do not determine a pose."""


class HighResidual(DemopipeError):
    """Pose residual exceeds the sanity bound (bad corner extraction)."""

    def __init__(self, message, rms_px):
        super().__init__(message)
        self.rms_px = rms_px


class EmptyInput(DemopipeError):
    """Operation received an empty point set."""


# --- synchronization --------------------------------------------------------

class TooFewSamples(DemopipeError):
    """Not enough handshake pairs for a latency estimate."""


class NegativeLatency(DemopipeError):
    """Estimated latency is negative; indicates a clock fault."""


class TooFewDecodable(DemopipeError):
    """Not enough frames with decodable clock markers."""


class StreamIdMismatch(DemopipeError):
    """Latency record applied to a stream with a different id."""


class OutOfRange(DemopipeError):
    """Interpolation query outside the pose stream's time coverage."""


class NoOverlap(DemopipeError):
    """Streams share no common time coverage."""


# --- hand-eye ---------------------------------------------------------------

class InsufficientExcitation(DemopipeError):
    """Calibration rotations do not span two independent axes."""


class NonConvergence(DemopipeError):
    """Iterative refinement hit its iteration cap without converging."""


class TooShort(DemopipeError):
    """Trajectory has fewer than two poses."""


# --- pipeline / recording ---------------------------------------------------

class MissingStream(DemopipeError):
    """Recording directory lacks a required stream."""


class SchemaViolation(DemopipeError):
    """Recording file violates the documented layout (carries file/line)."""

    def __init__(self, message, path=None, line=None):
        loc = f"{path}" + (f":{line}" if line is not None else "") if path else ""
        super().__init__(f"{message}" + (f" ({loc})" if loc else ""))
        self.path = path
        self.line = line


class EmptyRecording(DemopipeError):
    """Recording directory holds no frames at all."""


class EpisodeRejected(DemopipeError):
    """Episode failed validation hard limits; the report is attached."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class IoFailure(DemopipeError):
    """Container read/write failed."""


class StageError(DemopipeError):
    """Wraps an error with the pipeline stage it occurred in."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


# --- oracle -----------------------------------------------------------------

class EdgeOutOfView(DemopipeError):
    """Synthetic camera placement leaves edge structures outside the image."""
