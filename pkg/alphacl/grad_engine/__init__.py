"""Output and weight gradients, the reversible encoder and the alpha-CL steps."""

from .encoder import Activation as Activation
from .encoder import Encoder as Encoder
from .encoder import Head as Head
from .encoder import LayerStack as LayerStack
from .encoder import Trace as Trace
from .encoder import encoder_backward as encoder_backward
from .encoder import encoder_forward as encoder_forward
from .gradients import GradReport as GradReport
from .gradients import composite_energy as composite_energy
from .gradients import grad_composite_energy_wrt_outputs as grad_composite_energy_wrt_outputs
from .gradients import grad_energy_wrt_outputs as grad_energy_wrt_outputs
from .gradients import grad_loss_wrt_outputs as grad_loss_wrt_outputs
from .gradients import verify_gradient_identity as verify_gradient_identity
from .steps import WeightGradient as WeightGradient
from .steps import alpha_cl_gradient as alpha_cl_gradient
from .steps import alpha_cl_step as alpha_cl_step
from .steps import backprop_alpha_gradient as backprop_alpha_gradient
from .steps import backprop_through_alpha_step as backprop_through_alpha_step
from .steps import encode_batch as encode_batch
from .steps import loss_descent_step as loss_descent_step
from .steps import loss_gradient as loss_gradient
