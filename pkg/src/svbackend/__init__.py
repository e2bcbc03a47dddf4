"""Speaker-verification backend toolkit.

Pipeline pieces: embedding/trial/score file I/O (`corpus`), discriminant
projection and length normalization (`transform`), the Gaussian
speaker/noise covariance scorer (`jb`), the trainable pairwise model and
its objectives (`hybrid`), detection metrics (`metrics`), synthetic
corpora with known ground truth (`synth`), and the command-line front end
(`cli`).
"""

__version__ = "0.1.0"
