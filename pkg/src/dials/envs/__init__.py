from .warehouse import WarehouseConfig, WarehouseEnv
from .traffic import TrafficConfig, TrafficEnv
from .trace import read_trace, write_trace

__all__ = [
    "WarehouseConfig", "WarehouseEnv",
    "TrafficConfig", "TrafficEnv",
    "read_trace", "write_trace",
]


def make_env(name: str, grid_side: int, horizon: int = 100, **kw):
    if name == "warehouse":
        return WarehouseEnv(WarehouseConfig(grid_side=grid_side, horizon=horizon, **kw))
    if name == "traffic":
        return TrafficEnv(TrafficConfig(grid_side=grid_side, horizon=horizon, **kw))
    raise ValueError(f"unknown environment {name!r}")
