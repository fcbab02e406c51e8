from .projections import LayerTaskState, ExpStore, gpm_project, scaled_project, rogo_modify, effective_weight, \
    scale_grad, reg_loss, expand_scale, consolidate, exp_inference_weights
from .trainer import MethodConfig, ContinualMemory, TaskReport, train_task, training_step, search_round, \
    update_frozen_spaces, evaluate_task, task_weights, scale_finite_diff_check
