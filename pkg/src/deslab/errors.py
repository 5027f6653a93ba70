"""Exception types shared by every stage of the pipeline.

Each error carries a short ``code`` so the command line can print a
single machine-parsable line (``error: <code>: <message>``).
"""


class DeslabError(Exception):
    code = "error"


class PlantSyntaxError(DeslabError):
    code = "syntax"

    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class PlantError(DeslabError):
    code = "plant"


class FaultError(DeslabError):
    code = "fault"


class LogError(DeslabError):
    code = "log"


class DatasetError(DeslabError):
    code = "dataset"


class ModelError(DeslabError):
    code = "model"


class TrainingError(DeslabError):
    code = "training"


class MetricsError(DeslabError):
    code = "metrics"


class PlotError(DeslabError):
    code = "plot"
