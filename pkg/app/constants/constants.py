# Trajectory layout: each row is [action | state]
ACTION_DIM = 2
STATE_DIM = 4
TRANSITION_DIM = ACTION_DIM + STATE_DIM

# Point-mass dynamics
DT = 0.02
A_MAX = 1.0
V_MAX = 5.0
CELL_SIZE = 1.0
GOAL_RADIUS = 0.5
START_JITTER = 0.25  # in cells
WALL_MARGIN = 1e-6

# PD gains shared by the expert and the plan tracking controller
KP = 10.0
KD = 2.0
# Expert speed governor: braking deceleration, speed allowed through open turns,
# wall clearance of sight lines and how many path cells it looks ahead
EXPERT_BRAKE = 0.8
EXPERT_TURN_SPEED = 1.0
EXPERT_CLEARANCE = 0.15
EXPERT_LOOKAHEAD = 6
SIGHT_STEP = 0.05

EPISODE_CAPS = {"open": 600, "umaze": 600, "medium": 600, "large": 800}
DEFAULT_HORIZONS = {"open": 256, "umaze": 256, "medium": 256, "large": 384}

# Normalization
DEGENERATE_RANGE = 1e-6

# Dataset file
DATASET_MAGIC = b"SBPLAN01"
DATASET_FAMILY = b"SBPLAN"

# Dataset sizing
SEGMENT_REUSE_CAP = 4
DATASET_STEPS_PER_SAMPLE = 50

# '#' wall, '.' free
MAZE_LAYOUTS = {
    "open": (
        "#######",
        "#.....#",
        "#.....#",
        "#.....#",
        "#######",
    ),
    "umaze": (
        "#####",
        "#...#",
        "###.#",
        "#...#",
        "#####",
    ),
    "medium": (
        "########",
        "#..##..#",
        "#..#...#",
        "##...###",
        "#..#...#",
        "#.#..#.#",
        "#...#..#",
        "########",
    ),
    "large": (
        "############",
        "#....#.....#",
        "#.##.#.#.#.#",
        "#......#...#",
        "#.####.###.#",
        "#..#.#.....#",
        "##.#.#.#.###",
        "#..#...#...#",
        "############",
    ),
}

ENGINES = ("ddpm", "i2sb")
PSEUDO_ENGINES = ("expert", "random")
PRIOR_TAGS = ("gaussian", "straight_line", "learned")

# Denoiser architecture
UNET_DIMS = (32, 64, 128)
UNET_KERNEL = 5
UNET_GROUPS = 8
TIME_EMBED_DIM = 32
PRIOR_NEGATIVE_SLOPE = 0.1

# Trainer defaults
LEARNING_RATE = 2e-4
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CLIP_NORM = 1.0

# Bridge
BRIDGE_TOTAL_VARIANCE = 1.0

# Prior sampling must stay below this share of one denoiser forward pass
PRIOR_COST_BUDGET = 0.01

SWEEP_CSV_COLUMNS = (
    "engine",
    "prior",
    "n_steps",
    "nfe",
    "training_steps",
    "mean_score",
    "stderr",
    "episodes",
    "seeds",
)
FIGURE_CSV_COLUMNS = ("x", "series", "mean", "stderr")
