"""Cache-blocked explicit finite element solver for transient heat conduction
with solidification on tetrahedral meshes."""

from .blocked import (BlockPlan, TuneReport, autotune_block_count, blocked_step,
                      build_block_plan, improvement_factor, solve)
from .comm import (CommGraph, CommSchedule, ExchangeBuffer, InProcTransport,
                   build_comm_graph, edge_color_schedule, exchange_and_merge)
from .errors import (CommError, ConfigurationError, DegenerateElementError, MeshError,
                     MeshParseError, MeshValidationError, PartitionError, ProtocolError,
                     SolverError)
from .fem import (Adiabatic, Convection, FixedTemperature, InterfaceCondition, Material,
                  Problem, SolverConfig, SolverState, Table, apparent_heat_capacity,
                  assemble_local, explicit_update, initial_state, stable_timestep)
from .mesh import (Mesh, SisterPairing, build_dual_graph, build_node_graph,
                   pair_sister_facets, parse_mesh, read_mesh, write_mesh)
from .parallel import parallel_solve
from .partition import (AugmentedGraph, NodeClassification, PartMap,
                        augment_virtual_elements, classify_nodes, partition_elements,
                        partition_metrics)
from .reorder import bandwidth, permute_mesh, rcm_permutation, reorder_mesh

__version__ = "0.1.0"
