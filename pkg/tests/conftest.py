import pytest
from hypothesis import HealthCheck, settings

from extfaas.core import ClusterSpec, MB
from extfaas.dataplane import Cluster

settings.register_profile("default", deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_cluster():
    return Cluster(ClusterSpec(node_count=2, slots_per_node=2, net_bandwidth=100 * MB, compute_rate=100 * MB))
