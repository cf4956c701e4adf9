"""Reference results from the original large-scale study of this strategy.

The headline numbers below were obtained on a proprietary Bloomberg
Russell-2000 options dataset (roughly 170k option-day records).  They are
shipped as documented constants for comparison only: the synthetic
desk-scale pipeline in this package emits the same report schema but is
not expected to reproduce these values.

Metric values are percentages except ``mean_relative_error`` which is a
fraction of the realized price.
"""

# Final test-set results per method: accuracy / precision / recall in
# percent, mean relative forecast error as a fraction (QRM only).
REFERENCE_TEST_METRICS = {
    "qrm": {
        "accuracy": 49.77,
        "precision": 55.77,
        "recall": 52.43,
        "mean_relative_error": 0.12,
    },
    "classifier": {
        "accuracy": 56.36,
        "precision": 59.56,
        "recall": 70.22,
        "mean_relative_error": None,
    },
    "regressor": {
        "accuracy": 55.42,
        "precision": 60.32,
        "recall": 61.29,
        "mean_relative_error": None,
    },
}

# Human-readable method names used in figures and tables.
METHOD_LABELS = {
    "qrm": "QRM",
    "classifier": "Binary Classification",
    "regressor": "Regression NN",
}

# Chronological split sizes (option-day records) of the reference dataset.
REFERENCE_SPLIT_SIZES = {
    "train": 132_912,
    "validation": 13_401,
    "test": 23_549,
}
