from .challenge_protocol import ChallengeProtocol
from .evaluation import generate_synthetic, score_pairs
from .hashgray_xor import authenticate_match, protect, recover
from .metrics import compute_metrics, unlinkability
from .pipeline import run_evaluation
from .template_store import TemplateStore
