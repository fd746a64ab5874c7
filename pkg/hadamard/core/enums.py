from enum import Enum


class GradMode(str, Enum):
    STANDARD = "standard"
    GUIDED = "guided"  # ReLU nodes also mask negative upstream gradients


class OpKind(str, Enum):
    CONST = "CONST"
    MATMUL = "MATMUL"
    HADAMARD = "HADAMARD"
    ADD = "ADD"
    TANH = "TANH"
    RELU = "RELU"
    SOFTMAX_ROWS = "SOFTMAX_ROWS"
    LOG_SOFTMAX_ROWS = "LOG_SOFTMAX_ROWS"
    CONV2D = "CONV2D"
    EMBEDDING = "EMBEDDING"
    DETACH = "DETACH"
    RESHAPE = "RESHAPE"
    TRANSPOSE = "TRANSPOSE"
    REPLICATE_ROWS = "REPLICATE_ROWS"
    TAKE_ROW = "TAKE_ROW"
    SUM_ALL = "SUM_ALL"


class QuestionKind(str, Enum):
    COLOR_OF_SHAPE = "color-of-shape"
    SHAPE_OF_COLOR = "shape-of-color"
    COUNT = "count"


class Shape(str, Enum):
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"


class Color(str, Enum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    YELLOW = "yellow"


class CheckStatus(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
