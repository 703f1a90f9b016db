"""Physical constants (SI) and the fixed numerical tolerances used package-wide.

Tolerances are deliberately constants, not configuration: the test suite pins
bit-stable thresholds against them.
"""

HBAR = 1.054571817e-34            # J s
ELEMENTARY_CHARGE = 1.602176634e-19   # C
ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
ELECTRON_MASS = 9.1093837015e-31      # kg

# Singly ionized beryllium-9, the default ion species for SI runs.
BE9_ION_MASS = 9.0121831 * ATOMIC_MASS_UNIT - ELECTRON_MASS  # kg

# Density matrix / state vector invariants.
TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-10
POSITIVITY_TOL = 1e-8
NORM_TOL = 1e-10

# Operators constructed with hermitian=True must satisfy max|M - M^dag| below this.
LABELED_HERMITIAN_TOL = 1e-12

# Population allowed in the top two Fock levels before a truncated-basis run
# is flagged as outside its validity window.
TRUNCATION_POPULATION_TOL = 1e-6
