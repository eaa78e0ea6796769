"""Wire-protocol adapter: serves denoiser and scorer requests to the
slider engine over newline-delimited JSON (stdio or TCP).

Mock mode answers with a closed-form Gaussian model and fixed score
tables, reproducing the engine's analytic float32 arithmetic bit for
bit. Real mode wraps a text-conditioned diffusion pipeline and
embedding scorers (heavyweight dependencies load lazily).
"""

from .mock import MockModel
from .session import AdapterSession, PROTOCOL_VERSION

__version__ = "0.1.0"
