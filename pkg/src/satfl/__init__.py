"""Federated learning over satellite constellations: contact plans, FL state machines and aggregation schedulers."""
