"""counterstyle: classifier-conditioned style GAN training, style-coordinate
attribute discovery, counterfactual explanation, and flip-fraction evaluation.

The package is organized around a small pipeline:

- ``core``       style-space addressing, statistics, and the intervention primitive
- ``models``     generator / encoder / discriminator / classifier networks
- ``losses``     the four training loss terms and their bookkeeping
- ``training``   alternating GAN training and classifier pre-training
- ``attfind``    greedy discovery of classifier-driving style coordinates
- ``explain``    per-image counterfactual selection and rendering
- ``evaluation`` flip-fraction sufficiency, a value-difference baseline, ablations
- ``worlds``     closed-form oracle worlds and the procedural shapes dataset
- ``report``     figure strips and the HTML run report
- ``cli``        command-line entry points
"""

__version__ = "0.1.0"

from . import core  # noqa: F401
