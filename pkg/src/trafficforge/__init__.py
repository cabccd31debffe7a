"""trafficforge: scenario-driven generation of labeled, reproducible traffic datasets.

The package is organized around a small core:

- scenario / catalog: declarative scenario model and the shipped catalog
- randomness / netem_table: seeded sampling and netem-style distribution tables
- shaper: WAN-emulation profiles and traffic-control command rendering
- orchestrator / templates / engine: scenario execution on a simulated or
  container-engine backend, producing provenance-tagged pcap artifacts
- capture: pcap I/O, flow extraction, per-flow series and learning features
- coalescer: chunk merging, timeline stitching, ground-truth manifest
- stats: two-sample Kolmogorov-Smirnov testing and reproducibility reports
- learn: seeded random forest plus the distinguishability and classification
  experiments
- cli / report: command-line entry point and CSV+figure report writers
"""

__version__ = "0.1.0"

from .randomness import DistributionSpec, SeededRng, child_seed, sample  # noqa: F401
