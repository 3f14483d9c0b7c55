SPEED_OF_LIGHT = 299_792_458.0  # m/s
BOLTZMANN = 1.380649e-23  # J/K
T0_KELVIN = 290.0  # reference noise temperature
SUBCARRIERS_PER_RB = 12
SYMBOLS_PER_SLOT = 14
