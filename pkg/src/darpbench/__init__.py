"""Ridesharing dial-a-ride benchmark toolkit: instance generation, insertion
heuristic and optimal vehicle-group assignment solvers, and result reports."""

from .core import (Route, Schedule, Solution, Stop, compute_schedule, occupancy_histogram, read_solution,
                   route_cost, validate_solution, write_solution)
from .errors import FleetSizingError, FormatError, InfeasibleAssignment, InsertionError, SolverTimeout
from .ih import solve_ih
from .instance import (DemandRecord, Instance, NodeRef, Request, Vehicle, Zone, ZoneRef, build_instance,
                       generate_demand, generate_vehicles, read_instance, sample_location, sample_time,
                       size_fleet, write_instance)
from .roadnet import (RoadGraph, SpeedTable, TravelTimeMatrix, assign_speeds, build_travel_model,
                      compute_travel_time_matrix, contract_degree2, filter_largest_scc, load_graph,
                      read_matrix, travel_time, write_matrix)
from .vga import (AssignmentProblem, BranchAndBound, MilpBackend, VehicleGroup, best_route_for_group,
                  generate_groups, solve_assignment, solve_vga)

__all__ = [
    "Route", "Schedule", "Solution", "Stop", "compute_schedule", "occupancy_histogram", "read_solution",
    "route_cost", "validate_solution", "write_solution", "FleetSizingError", "FormatError",
    "InfeasibleAssignment", "InsertionError", "SolverTimeout", "solve_ih", "DemandRecord", "Instance",
    "NodeRef", "Request", "Vehicle", "Zone", "ZoneRef", "build_instance", "generate_demand",
    "generate_vehicles", "read_instance", "sample_location", "sample_time", "size_fleet", "write_instance",
    "RoadGraph", "SpeedTable", "TravelTimeMatrix", "assign_speeds", "build_travel_model",
    "compute_travel_time_matrix", "contract_degree2", "filter_largest_scc", "load_graph", "read_matrix",
    "travel_time", "write_matrix", "AssignmentProblem", "BranchAndBound", "MilpBackend", "VehicleGroup",
    "best_route_for_group", "generate_groups", "solve_assignment", "solve_vga",
]

__version__ = "0.1.0"
