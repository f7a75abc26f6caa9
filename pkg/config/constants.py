# ---------------------------
# Motion layout
# ---------------------------
MOTION_COLUMNS = [
    "head_pitch", "head_yaw", "head_roll",
    "l_eye_pitch", "l_eye_yaw",
    "r_eye_pitch", "r_eye_yaw",
]
MOTION_DIM = len(MOTION_COLUMNS)

HEAD_CHANNELS = [0, 1, 2]
GAZE_CHANNELS = [3, 4, 5, 6]
CHANNEL_GROUPS = {
    "all": list(range(MOTION_DIM)),
    "gaze": GAZE_CHANNELS,
    "head": HEAD_CHANNELS,
}

# ---------------------------
# Timing / filtering
# ---------------------------
TARGET_FPS = 25
ANGLE_BOUND_DEG = 40.0
AUDIO_SAMPLE_RATE = 16000

# ---------------------------
# Windowing defaults (frames)
# ---------------------------
PAST_WINDOW = 25
FUTURE_WINDOW = 10

# ---------------------------
# Gaze pattern thresholds
# ---------------------------
SACCADE_VELOCITY_DEG_S = 30.0
IDT_DISPERSION_DEG = 3.5
IDT_MIN_FRAMES = 3

COMP_STABLE_BELOW = 20.0
COMP_BAND_LOW = 25.0
COMP_BAND_HIGH = 90.0

BEAT_SIGMA_FRAMES = 3.0
