"""motionlift: camera-conditioned 2D motion diffusion and multi-view 3D lifting.

Library layout:
  motion      2D/3D sequence types, root/local decomposition, masking
  camera      pinhole projection, epipolar geometry, line residuals
  camsim      synthetic camera trajectories and ring-view placement
  schedule    DDPM schedule, forward noising, reverse sampling
  denoiser    compact conditional denoiser with manual backprop
  training    hybrid training losses and Adam
  sds         score-distillation multi-view synthesis
  triangulate multi-view 3D reconstruction
  objectpose  6D rotations, rigid/similarity alignment, object pose fitting
  chamfer     2D Chamfer distance and silhouette-based pose alignment
  metrics     2D/3D evaluation metrics
  fileio      JSON/OBJ/PGM schemas
  config      run configuration
  cli         command-line pipeline
"""

__version__ = "0.1.0"
