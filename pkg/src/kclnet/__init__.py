"""KCL-guided contrastive pretraining for analog circuit graphs."""

from .agnn import AgnnConfig, encode, forward_async, forward_sync, init_params, make_plan, prepare
from .cktgraph import assign_depths, build_bipartite, compile_circuit, rank_check, to_dag
from .kclloss import LossConfig, depth_current_embeddings, hard_negatives, kcl_loss
from .kclverify import construct_phi, difference_matrix, epsilon_bound_report, verify_trained_model
from .netlist import parse_netlist, serialize_circuit, validate_circuit

__version__ = "0.1.0"
