"""Resonant normal forms and KAM tools for NLS-type Hamiltonians on the lattice Z^d."""

__version__ = "0.1.0"

MODULE_VERSIONS = {
    "lattice_core": "1.0",
    "resonance_graph": "1.0",
    "birkhoff_poly": "1.0",
    "block_matrices": "1.0",
    "final_graph": "1.0",
    "melnikov": "1.0",
    "stratification": "1.0",
    "kam_engine": "1.0",
    "cli": "1.0",
}
