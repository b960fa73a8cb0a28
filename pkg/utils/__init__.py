# utils/__init__.py
# Helper modules for the topology, optimizer, simulator and report stages.
