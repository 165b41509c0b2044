"""Actor-critic networks, the soft actor-critic trainer, checkpointing and
a cross-entropy-method baseline, all on plain numpy."""

from .nets import (Adam, CriticNet, ActorNet, actor_loss_and_grads,
                   critic_loss_and_grads, gradient_check_actor,
                   gradient_check_critic)
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint
from .sac import ReplayBuffer, TrainerConfig, SACTrainer, desk_config
from .cem import cem_optimize
