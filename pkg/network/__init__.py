from network.case import (
    Bus, Branch, Generator, PowerNetwork,
    parse_case, read_case, serialize_case, attach_buildings, round_robin_assignment,
)
from network.ptdf import ptdf, dc_power_flow
