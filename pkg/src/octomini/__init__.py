"""octomini: a desk-scale AMR octree with FMM self-gravity, finite-volume
hydrodynamics, a work-stealing futures engine, and a simulated multi-locality
ghost-exchange layer, plus a throughput benchmark CLI."""

__version__ = "0.1.0"
