"""In-process simulated FaaS cluster with an extensible control plane."""

from .core import ClusterSpec, DataDistribution, DecisionTuple, NodeStatus, Priority, SchedulePolicy
from .dataplane import Cluster, init_cluster

__all__ = ["Cluster", "ClusterSpec", "DataDistribution", "DecisionTuple", "NodeStatus", "Priority",
           "SchedulePolicy", "init_cluster"]
__version__ = "0.1.0"
