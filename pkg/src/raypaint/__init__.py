"""raypaint: a desk-scale differentiable radiance-field engine with
feature-field distillation, patch-driven semantic masks, and guided
repainting under pluggable score-distillation / embedding providers.
"""

from .cameras import Camera, look_at, orbit_camera
from .dataset import (Dataset, GroundPlane, GroundTruthView, Primitive, SceneSpec,
                      load_dataset, make_dataset, named_scene, perturb_depth,
                      trace_ground_truth, write_dataset)
from .errors import (ConfigurationError, ContractViolation, DegenerateFieldError,
                     FormatError, MissingFileError, NotFittedError, NumericFault,
                     RaypaintError)
from .field import (AdamState, GradientBuffer, HashGridConfig, RadianceField,
                    adam_step, dir_encode, load_checkpoint, save_checkpoint)
from .guidance import (DenoiserProvider, EmbeddingProvider, NoiseSchedule,
                       TargetSpec, ToyDeltaDenoiser, ToyPaletteEmbedder,
                       build_guidance, clip_loss, clip_loss_grad, perturb_image,
                       sds_pixel_grad)
from .losses import (LossWeights, PixelBatch, color_loss, depth_loss, feature_loss,
                     stage1_loss, unmask_loss)
from .masks import (MaskSet, PatchSelection, extract_mask_set, load_mask_set,
                    patch_mean, reprojection_consistency, save_mask_set,
                    similarity_map, threshold_mask)
from .pipeline import (BasePretrainer, JobStatus, Repainter, Stage1Trainer,
                       eval_iou, eval_psnr, pretrain_base, repaint, train_stage1)
from .renderer import (Rays, composite, composite_backward, gen_rays, render_rays,
                       render_rays_backward, render_view, sample_stratified)

__version__ = "0.1.0"
