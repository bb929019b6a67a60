import os

from dotenv import load_dotenv


# Load .env file variables
load_dotenv()


# Runtime
THREADS = int(os.getenv("TORUS_RENORM_THREADS", "1"))        # joblib workers for experiment seeds
LOG_LEVEL = os.getenv("TORUS_RENORM_LOG_LEVEL", "INFO")

# Tweakable settings
DEFAULT_K = int(os.getenv("TORUS_RENORM_K", "15"))             # l1 truncation radius of the Fourier window
DEFAULT_RHO = float(os.getenv("TORUS_RENORM_RHO", "0.6"))       # analyticity radius of the norms
DEFAULT_RHO_PRIME = float(os.getenv("TORUS_RENORM_RHO_PRIME", "0.5"))
DROP_TOL = float(os.getenv("TORUS_RENORM_DROP_TOL", "1e-16"))   # relative to the field plain norm
ORDER_CAP = int(os.getenv("TORUS_RENORM_ORDER_CAP", "30"))      # composition series order cap
COMPOSE_TOL = 1e-17
NEUMANN_TOL = 1e-17
NEUMANN_MAX_TERMS = 400
MIN_RESCALE = 0.1
BOUNDARY_REL_TOL = 1e-9      # resonance classification boundary warning
CONE_SAMPLES = 20000         # directions sampled by the cone check when d >= 3

# Seeds
SEED_RANDOM_RADIUS = 3       # largest |k| used by random perturbation generators
