"""
Test suite for the FedCE simulator.
"""
