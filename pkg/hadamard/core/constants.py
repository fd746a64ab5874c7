# dataset file
DATASET_MAGIC = b"SVQA1\x00"
DATASET_TRAIN_FILE = "train.svqa"
DATASET_VAL_FILE = "val.svqa"
VOCAB_FILE = "vocab.txt"
VOCAB_SECTION = "[vocab]"
ANSWERS_SECTION = "[answers]"

# checkpoint file
CHECKPOINT_MAGIC = b"MLBCKPT1"
CHECKPOINT_VERSION = 1

# explain outputs
HEATMAP_FILE = "heatmap.pgm"
SALIENT_FILE = "salient.pgm"
ALPHA_FILE_TEMPLATE = "alpha_{glimpse}.pgm"
TOKENS_FILE = "tokens.json"
INPUT_IMAGE_FILE = "input.ppm"

# pixel blocks per lattice cell (56 -> 14 after two stride-2 stages)
CELL_PIXELS = 4

PGM_CLAMP = 3.0
PGM_MAXVAL = 255

STD_EPS = 1e-12
GRADCHECK_DENOM_FLOOR = 1e-8
# headroom over the machine-epsilon estimate of central-difference round-off
ROUNDOFF_SAFETY = 10.0

PLACEMENT_MAX_ATTEMPTS = 1000
SCENE_MARGIN = 2
OBJECT_MIN_SIZE = 8
OBJECT_MAX_SIZE = 16

# exit codes
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
