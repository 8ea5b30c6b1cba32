"""Single-photon / single-atom scattering toolkit.

Forward physics (envelope -> excitation dynamics -> detector rates),
Monte Carlo synthesis of heralded coincidence histograms, and the
inverse analysis (histograms -> excited-state population -> extinction
-> parameter fits).
"""

__version__ = "0.1.0"

from .cavity import (CavityParams, cavity_decay_time, envelope_overlap,
                     herald_impulse_response, reflection_response,
                     shape_conditional_probe)
from .dynamics import (AtomParams, ExcitationTrace, Provenance, backward_rate,
                       binned_delta_analytic, delta_rate,
                       excited_population_decaying, excited_population_rising,
                       extinction_closed_form, extinction_numeric, forward_rate,
                       peak_excitation_rising, solve_amplitude_ode)
from .envelopes import (EnvelopeShape, PhotonEnvelope, default_grid,
                        envelope_bin_integrals, make_decaying, make_rising,
                        make_tabulated, power_spectrum, read_envelope_csv,
                        time_reverse, write_envelope_csv)
from .errors import (ConfigError, DataFormatError, FitError, PhotonAtomError,
                     StepSizeError)
from .events import (Channel, CoincidenceHistogram, EfficiencyChain,
                     read_histogram_csv, synthesize, write_histogram_csv)
from .fitting import (EnvelopeFit, FitResult, LambdaFit, damped_least_squares,
                      fit_envelope, fit_lambda, spectral_overlap)
from .reconstruct import (FloorEstimate, RateSeries, counts_to_rate,
                          delta_series, extinction_from_data,
                          reconstruct_backward, reconstruct_forward,
                          subtract_accidentals)

__all__ = [name for name in dir() if not name.startswith("_")]
