"""Exception types raised across the package."""


class ContinuityError(Exception):
    """Base class for all package errors."""


class MissingManifest(ContinuityError):
    pass


class EmptyCorpus(ContinuityError):
    pass


class CorruptFrame(ContinuityError):
    def __init__(self, video_id, frame_index, errors=None):
        self.video_id = video_id
        self.frame_index = frame_index
        # every (video_id, frame_index) that failed, first one is the headline
        self.errors = list(errors or [(video_id, frame_index)])
        super().__init__(f"unreadable frame {frame_index} in video {video_id!r}"
                         + (f" (+{len(self.errors) - 1} more)" if len(self.errors) > 1 else ""))


class InvalidSpec(ContinuityError):
    pass


class WriteFailure(ContinuityError):
    pass


class OutOfRange(ContinuityError):
    def __init__(self, start, length, num_frames):
        self.start, self.length, self.num_frames = start, length, num_frames
        super().__init__(f"clip [{start}, {start + length}) outside video of {num_frames} frames")


class VideoTooShort(ContinuityError):
    def __init__(self, num_frames, required):
        self.num_frames, self.required = num_frames, required
        super().__init__(f"video has {num_frames} frames, need at least {required}")


class ClipTooSmall(ContinuityError):
    pass


class UnsupportedTemporalLength(ContinuityError):
    pass


class ShapeMismatch(ContinuityError):
    pass


class EmptyBatch(ContinuityError):
    pass


class LabelOutOfRange(ContinuityError):
    pass


class NonFiniteLoss(ContinuityError):
    def __init__(self, step, diagnostics=None):
        self.step = step
        self.diagnostics = diagnostics or {}
        super().__init__(f"non-finite loss at step {step}: {self.diagnostics}")


class CheckpointWriteFailure(ContinuityError):
    pass


class EmptySet(ContinuityError):
    pass


class KTooLarge(ContinuityError):
    def __init__(self, k, available):
        self.k, self.available = k, available
        super().__init__(f"k={k} exceeds the {available} available training videos")


class ConfigError(ContinuityError):
    pass


class CompatibilityError(ContinuityError):
    def __init__(self, diff):
        # field -> (checkpoint value, requested value)
        self.diff = diff
        lines = ", ".join(f"{k}: {a!r} != {b!r}" for k, a, b in ((k, *v) for k, v in diff.items()))
        super().__init__(f"checkpoint/config mismatch: {lines}")
