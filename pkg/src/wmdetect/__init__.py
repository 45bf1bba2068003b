"""Black-box detection of invisibly watermarked images in datasets.

Train a small scoring network against a clean reference set; shared-
distribution gradients cancel, iterative pruning condenses the detection
set toward watermarked samples, and the resulting per-sample ranking
feeds standard ROC metrics. Also ships four reference watermark
embedders, a deterministic synthetic corpus generator, naive statistical
baselines, and a CLI that wires it all together.
"""

import os as _os

# These GEMM sizes lose to thread-sync overhead on small machines; single
# threaded BLAS is both faster and stable run to run. Only effective when
# this package is imported before numpy; offsetlearn additionally pins the
# pools via threadpoolctl when available.
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
_os.environ.setdefault("OMP_NUM_THREADS", "1")

__version__ = "0.1.0"

from .corpus import (  # noqa: E402
    CorpusSpec,
    Manifest,
    SampleRecord,
    build_detection_set,
    load_dataset,
    synth_corpus,
    to_model_input,
)
from .losses import LossConfig, loss_max, loss_min  # noqa: E402
from .metrics import auc, fpr_at_tpr, psnr, roc_metrics, tpr_at_fpr  # noqa: E402
from .nnkernel import (  # noqa: E402
    ArchConfig,
    ModelParams,
    NonFiniteLossError,
    OptState,
    adamw_step,
    backward,
    forward,
    grad_check,
    model_init,
)
from .offsetlearn import (  # noqa: E402
    DetectionState,
    ScoreReport,
    TrainConfig,
    prune,
    rank_scores,
    run_wmd,
)
from .prng import prng_stream  # noqa: E402
from .watermarks import (  # noqa: E402
    WatermarkMethod,
    dds_decode,
    dds_embed,
    lsb_decode,
    lsb_embed,
    ring_detect,
    ring_embed,
    ss_detect,
    ss_embed,
)
