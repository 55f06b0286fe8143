from .dqn import (DqnAgent, DqnConfig, episode_return, epsilon_schedule, select_action, select_actions,
                  sync_target, td_target, train_step)
from .network import Adam, SGD, bellman_loss_and_grad, init_params, q_forward
from .observation import (OBS_DIM, SHARED_DIM, Observation, SharedInfo, epsilon_neighbor_matrix, epsilon_neighbors,
                          lane_change_frequency, observe, observe_batch, shared_avg_velocity,
                          shared_info_batch)
from .replay import ReplayBuffer
