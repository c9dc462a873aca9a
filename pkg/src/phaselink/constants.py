"""Physical constants and Torino link numbers used across the package."""

C_VACUUM = 2.998e8  # m/s
N_GROUP = 1.468  # SMF refractive index used for all propagation delays

NU_REFERENCE = 194.4e12  # Hz
NU_SENSING = 194.25e12  # Hz

FIBER_LOOP_BW = 50e3  # Hz
QKD_PLL_BW = 0.9e6  # Hz; 1 MHz is quoted elsewhere for the same lock
REFERENCE_LINEWIDTH = 1.0  # Hz

TIMING_GRID = 150e-12  # s, SPD timestamp resolution


def propagation_delay(length_km: float) -> float:
    """One-way group delay (s) of ``length_km`` of fiber."""
    return N_GROUP * length_km * 1e3 / C_VACUUM
