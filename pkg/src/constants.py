import math

# Package and file format versions
PACKAGE_VERSION = "0.3.0"
WORLD_FORMAT_VERSION = "1.0"
MODEL_FORMAT_VERSION = "1.0"
REPORT_FORMAT_VERSION = "1.0"
FEATURE_SCHEMA_VERSION = 1

WORLD_FILE_MAGIC = b"IGWD"
MODEL_FILE_KIND = "igi-forest"
POLICY_FILE_KIND = "igi-policy"

# Belief cell states
BELIEF_UNKNOWN = 0
BELIEF_FREE = 1
BELIEF_OCCUPIED = 2

# World generation
DEFAULT_GRID_DIMS = (64, 64)
DEFAULT_RESOLUTION = 1.0
MIN_GRID_DIM = 32
DEFAULT_NUM_NODES = 300
LINE_LENGTH_RANGE = (24.0, 40.0)
LINE_SEPARATION_RANGE = (6.0, 14.0)
BLOCK_COUNT_RANGE = (4, 8)
BLOCK_HALF_EXTENT_RANGE = (2, 5)
MARGIN_BAND_FRACTION = 0.25
POISSON_RADIUS_RANGE = (1.0, 2.0)
DEFAULT_POISSON_INTENSITY = 20.0 / (64 * 64)
NODE_CELL_MARGIN = 0.1
NODE_SAMPLING_RETRY_FACTOR = 50
WORLD_GENERATION_RETRIES = 100

GENERATOR_PARALLEL_LINES = "parallel-lines"
GENERATOR_DISTRIBUTED_BLOCKS = "distributed-blocks"
GENERATOR_POISSON_FOREST = "poisson-forest"
GENERATOR_NAMES = (GENERATOR_PARALLEL_LINES, GENERATOR_DISTRIBUTED_BLOCKS, GENERATOR_POISSON_FOREST)

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
SPLIT_VALIDATION = "validation"
SPLITS = (SPLIT_TRAIN, SPLIT_TEST, SPLIT_VALIDATION)

# Sensor
DEFAULT_NUM_RAYS = 128
DEFAULT_FOV = 2.0 * math.pi
DEFAULT_MAX_RANGE = 12.0

# Problem variants
VARIANT_UNC = "UNC"
VARIANT_CON = "CON"
DEFAULT_HORIZON = 30

# Oracles
ORACLE_GREEDY = "greedy"
ORACLE_GCB = "gcb"
ORACLE_KINDS = (ORACLE_GREEDY, ORACLE_GCB)
MIN_EDGE_COST = 1e-9

# Baseline heuristics, keyed by the CLI name
METRIC_AVERAGE_ENTROPY = "AverageEntropy"
METRIC_REAR_SIDE_VOXEL = "RearSideVoxel"
METRIC_OCCLUSION_AWARE = "OcclusionAware"
METRIC_UNKNOWN_COUNT = "UnknownCount"
HEURISTIC_CLI_NAMES = {
    "average-entropy": METRIC_AVERAGE_ENTROPY,
    "rear-side-voxel": METRIC_REAR_SIDE_VOXEL,
    "occlusion-aware": METRIC_OCCLUSION_AWARE,
    "unknown-count": METRIC_UNKNOWN_COUNT,
}
DEFAULT_MOTION_PENALTY = 0.05

# Feature schema (order is part of the model file format)
FEATURE_AVG_ENTROPY_GAIN = "avg_entropy_gain"
FEATURE_UNKNOWN_IN_RANGE = "unknown_cells_in_range"
FEATURE_REAR_SIDE_COUNT = "rear_side_voxel_count"
FEATURE_REAR_SIDE_GAIN = "rear_side_entropy_gain"
FEATURE_OCCLUSION_AWARE_GAIN = "occlusion_aware_gain"
FEATURE_EXPECTED_NEW_SURFACE = "expected_new_surface"
FEATURE_TRANSLATION = "translation_dist"
FEATURE_HEADING_CHANGE = "heading_change"
FEATURE_REMAINING_BUDGET = "remaining_budget_fraction"
FEATURE_TIMESTEP = "timestep_fraction"
FEATURE_NAMES = (
    FEATURE_AVG_ENTROPY_GAIN,
    FEATURE_UNKNOWN_IN_RANGE,
    FEATURE_REAR_SIDE_COUNT,
    FEATURE_REAR_SIDE_GAIN,
    FEATURE_OCCLUSION_AWARE_GAIN,
    FEATURE_EXPECTED_NEW_SURFACE,
    FEATURE_TRANSLATION,
    FEATURE_HEADING_CHANGE,
    FEATURE_REMAINING_BUDGET,
    FEATURE_TIMESTEP,
)
INFO_GAIN_FEATURES = FEATURE_NAMES[:6]
METRIC_FEATURES = {
    METRIC_AVERAGE_ENTROPY: FEATURE_AVG_ENTROPY_GAIN,
    METRIC_REAR_SIDE_VOXEL: FEATURE_REAR_SIDE_COUNT,
    METRIC_OCCLUSION_AWARE: FEATURE_OCCLUSION_AWARE_GAIN,
    METRIC_UNKNOWN_COUNT: FEATURE_UNKNOWN_IN_RANGE,
}

# Regression forest defaults
DEFAULT_NUM_TREES = 50
DEFAULT_MAX_DEPTH = 12
DEFAULT_MIN_SAMPLES_LEAF = 5
DEFAULT_BOOTSTRAP = True

# Training
ALGO_REWARD_FT = "RewardFT"
ALGO_QVAL_FT = "QvalFT"
ALGO_REWARD_AGG = "RewardAgg"
ALGO_QVAL_AGG = "QvalAgg"
ALGORITHMS = (ALGO_REWARD_FT, ALGO_QVAL_FT, ALGO_REWARD_AGG, ALGO_QVAL_AGG)
FORWARD_ALGORITHMS = {ALGO_REWARD_FT, ALGO_QVAL_FT}
AGGREGATE_ALGORITHMS = {ALGO_REWARD_AGG, ALGO_QVAL_AGG}
REWARD_TARGET_ALGORITHMS = {ALGO_REWARD_FT, ALGO_REWARD_AGG}
ALGORITHM_CLI_NAMES = {
    "reward-ft": ALGO_REWARD_FT,
    "qval-ft": ALGO_QVAL_FT,
    "reward-agg": ALGO_REWARD_AGG,
    "qval-agg": ALGO_QVAL_AGG,
}
MIX_SCHEDULE_FIRST_ORACLE = "first-oracle"
MIX_SCHEDULE_EXPONENTIAL = "exponential"
MIX_SCHEDULES = (MIX_SCHEDULE_FIRST_ORACLE, MIX_SCHEDULE_EXPONENTIAL)
DEFAULT_ITERATIONS = 10
DEFAULT_EPISODES_PER_ITERATION = 50
DEFAULT_ACTIONS_LABELED_PER_STATE = 8
DEFAULT_MIX_DECAY = 0.5
MAX_ROLLIN_RESAMPLES = 20

# PRNG stream keys
STREAM_WORLDGEN = 0
STREAM_TRAIN = 1
STREAM_FIT = 2
STREAM_EVAL = 3

# Evaluation
CI_Z = 1.96
CURVE_CSV = "curve.csv"
FINAL_CSV = "final.csv"
TRAJECTORIES_JSONL = "trajectories.jsonl"
CURVE_COLUMNS = ("policy", "timestep", "mean", "ci_half", "n")
FINAL_COLUMNS = ("policy", "median", "lo", "hi")
CI_HEADER = "# ci_half = 1.96 * std(ddof=1) / sqrt(n) over test worlds; ci_half = 0 when n = 1"
TERMINAL_HORIZON = "horizon"
TERMINAL_BUDGET = "budget-exhausted"
TERMINAL_POLICY_ERROR = "policy-error"
POLICY_RANDOM = "random"
POLICY_ORACLE = "oracle"

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
POLICY_FILE = "policy.json"

# Reference harness limits
BRUTE_FORCE_MAX_NODES = 10
BRUTE_FORCE_MAX_HORIZON = 4
ADAPTIVE_MAX_NODES = 8
ADAPTIVE_MAX_HORIZON = 3
ADAPTIVE_MAX_WORLDS = 8
TINY_ENSEMBLE_MAX_WORLDS = 16
TINY_GRID_DIMS = (12, 12)
TINY_NUM_RAYS = 32
TINY_MAX_RANGE = 6.0
LEMMA_TOLERANCE = 1e-9
GREEDY_RATIO = 1.0 - 1.0 / math.e

SUITE_SUBMODULARITY = "submodularity"
SUITE_SENSOR = "sensor"
SUITE_LEMMA1 = "lemma1"
SUITE_LEMMA2 = "lemma2"
SUITE_GREEDY_KNOWN = "greedy-known"
SUITE_MEMORIZATION = "memorization"
SUITES = (SUITE_SUBMODULARITY, SUITE_SENSOR, SUITE_LEMMA1, SUITE_LEMMA2, SUITE_GREEDY_KNOWN, SUITE_MEMORIZATION)

# Exit codes
EXIT_OK = 0
EXIT_RUNTIME_ERROR = 1
EXIT_USAGE_ERROR = 2

# Error messages
ERROR_INVALID_GRID_DIMS = "Invalid grid dims {}: each side must be at least {} cells"
ERROR_LINE_DOES_NOT_FIT = "Grid dims {} cannot fit a line of minimum length {}"
ERROR_INVALID_RANGE = "Invalid {} range {}: expected 0 < low <= high"
ERROR_INVALID_MARGIN = "Invalid margin band fraction {}: expected 0 < fraction < 0.5"
ERROR_INVALID_INTENSITY = "Invalid Poisson intensity {}: must be > 0"
ERROR_GENERATION_RETRIES = "Generator '{}' produced no valid world after {} attempts"
ERROR_INSUFFICIENT_FREE_SPACE = "World has {} free cells, cannot place {} nodes"
ERROR_NODE_IN_OBSTACLE = "Node {} at ({:.3f}, {:.3f}) is not inside a free cell"
ERROR_ZERO_COVERABLE = "No surface cell is visible from any node; coverage is undefined"
ERROR_UNKNOWN_NODE = "Unknown node id: {}"
ERROR_OBSERVATION_CONFLICT = "Measurement at node {} contradicts the belief at {} cells"
ERROR_NO_FEASIBLE_ACTION = "No feasible action from node {} (visited {}, cost {:.3f})"
ERROR_EMPTY_DATASET = "Regression dataset has {} examples, need at least {}"
ERROR_SCHEMA_MISMATCH = "Feature schema mismatch: expected {}, got {}"
ERROR_INSTANCE_TOO_LARGE = "Instance too large for exhaustive search: {}"
ERROR_NO_CONSISTENT_WORLD = "No ensemble world is consistent with the belief history"
ERROR_UNKNOWN_GENERATOR = "Unknown generator '{}'. Valid generators are: {}"
ERROR_UNKNOWN_KEYS = "Unknown keys in {}: {}"
