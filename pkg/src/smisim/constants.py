"""Physical constants and fixed defaults shared across modules."""

HBAR = 1.054571817e-34  # J s
Z0 = 50.0  # feedline impedance, Ohm

# Table-1 style indicative values of the readout chain
CARRIER_FREQUENCY = 6.16e9  # Hz
MODULATION_FREQUENCY = 10e6  # Hz

# numpy bit generator used everywhere; recorded in every manifest
PRNG_ID = "numpy.random.PCG64"
