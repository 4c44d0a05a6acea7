"""Neural image codec with locally-conditioned adversarial fine-tuning."""

from .codec import (
    CodecConfig,
    HyperpriorCodec,
    RateEstimate,
    likelihood_bits,
    load_codec,
    quantize,
)
from .discriminator import DiscriminatorConfig, make_discriminator
from .entropy import (
    BitstreamContainer,
    CDFTable,
    build_cdf,
    parse_container,
    range_decode,
    range_encode,
    serialize_container,
)
from .labeler import LabelerConfig, VQLabeler, fake_label_map, nearest_code
from .losses import (
    LossWeights,
    PerceptualExtractor,
    binary_gan_losses,
    distortion,
    illm_disc_loss,
    illm_gen_loss,
    total_objective,
)
from .metrics import MetricsReport, evaluate_codec, extract_features, fid, kid, ms_ssim, psnr
from .schedules import RateTargetSchedule, StagePlan, freeze_plan, lr_at_step, rate_lambda
from .training import TrainingSession

__version__ = "0.1.0"
