"""Reference parameters of the heralded-photon / single-Rb-atom experiment.

These are the measured values the toolkit defaults to: the 26.2 ns
lifetime of the Rb D2 closed transition, a 13.3 ns photon coherence
time, a free-space focusing geometry with ~3% spatial mode overlap, and
the detection efficiencies of the forward and backward paths.
"""

from .cavity import CavityParams
from .dynamics import AtomParams
from .events import EfficiencyChain

TAU0_NS = 26.2
TAU_P_NS = 13.3
OVERLAP = 0.033

REFERENCE_ATOM = AtomParams(tau0=TAU0_NS, overlap=OVERLAP)

REFERENCE_CHAIN = EfficiencyChain(
    eta_f=3.70e-3,        # forward coincidence probability per herald
    eta_f_tilde=0.0155,   # forward heralding efficiency (corrected)
    eta_b=0.0126,         # backward collection efficiency
    eta_q=0.56,           # backward detector quantum efficiency
    accidental_rate=0.0,
)

REFERENCE_CAVITY = CavityParams(
    length_mm=125.0,
    finesse=103.0,
    r_in=0.943,
    r_back=0.9995,
    detuning_mhz=0.0,
)
