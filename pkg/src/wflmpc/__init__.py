"""Three-server weighted federated averaging over additive secret shares."""

from .errors import MPCError, InputError, ProtocolError, RoundFailed, Timeout
from .field import DEFAULT_FIELD, MERSENNE_61, FieldConfig, FieldElement, SeededRng, fp_decode, fp_encode
from .protocol import BEAVER, ZERO_SUM, BeaverOracle, Hooks, ZeroSumOracle
from .sharing import SecretShares, reconstruct, split
from .wfl import RoundResult, RoundSpec, clear_average, client_contribute, execute_round, run_round

__version__ = "0.1.0"

__all__ = [
    "BEAVER", "ZERO_SUM", "BeaverOracle", "DEFAULT_FIELD", "FieldConfig", "FieldElement", "Hooks",
    "InputError", "MERSENNE_61", "MPCError", "ProtocolError", "RoundFailed", "RoundResult", "RoundSpec",
    "SecretShares", "SeededRng", "Timeout", "ZeroSumOracle", "clear_average", "client_contribute",
    "execute_round", "fp_decode", "fp_encode", "reconstruct", "run_round", "split",
]
