"""Passive resistive-crossbar simulator with integrated compute and security
primitives: quantized in-memory vector-matrix multiplication, true random
number generation from stochastic switching, a challenge-response function
rooted in fabrication randomness, and a device-bound weight locking
protocol built on all three.
"""

from .calibration import (CalibrationProfile, get_profile, ideal_profile,
                          load_profile, paper_2023_profile, save_profile,
                          with_overrides)
from .crossbar import (ADC_MODE_EXACT, ADC_MODE_PAPER, ColumnCurrents, Crossbar,
                       DacLevels, MODE_PUF, MODE_TRNG, MODE_VMM,
                       TERMINATION_FLOATING_UNSELECTED, TERMINATION_VIRTUAL_GROUND,
                       adc_bit_depth, adc_quantize, build_crossbar,
                       column_currents_ideal, column_currents_nodal, csa_compare,
                       dac_map, default_dac_levels, export_text, import_text,
                       load_crossbar, save_crossbar, set_mode)
from .device import (BINARY, DeviceInstance, DeviceMode, DeviceParams, DeviceState,
                     PulseSpec, apply_pulse, gradual_reset, level_resistance,
                     multistate, new_device, read_conductance, sample_device)
from .errors import (CalibrationError, ConvergenceError, DimensionError, FormatError,
                     IllPosedNetworkError, InsufficientEntropyError, IntegrityError,
                     ModeMisuseError, ProgramOrderError, RangeError,
                     UninitializedEntropyError, XbarError)
from .locking import (EncryptedWeightBundle, EnrollmentRecord, KeyMaterial,
                      derive_key, load_bundle, lock_protocol, lock_weights,
                      p50_pulse_for, save_bundle, unlock_weights)
from .puf import (Challenge, ChallengeResponsePair, CrpStore, PufMetricsReport,
                  Response, compute_metrics, enroll_thresholds, evaluate,
                  initialize_entropy, random_challenges)
from .trng import (TrngBatch, calibrate_p50_pulse, generate_batch, harvest_stream,
                   lag1_autocorrelation, longest_run, ones_fraction, pack_bits,
                   stream_report, unpack_bits)
from .vmm import (VmmResult, WeightMatrix, load_weights, program_weights,
                  save_weights, vmm)

__version__ = "0.1.0"
