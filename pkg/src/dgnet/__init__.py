"""dgnet: interior-penalty DG discretizations of the 2D Poisson problem and
linear convolutional U-Net surrogates trained on (or without) DG labels."""

from .dg import (DgConfig, DgFunction, assemble, convergence_rate, darcy_source,
                 error_norm, mass_error, solve_dg, source_terms)
from .io import (Dataset, Sample, generate_dataset, load_checkpoint,
                 read_dataset, save_checkpoint, write_dataset)
from .mesh import (DofLayout, StructuredMesh, build_mesh, image_to_vector,
                   vector_to_image)
from .nn import UNet, UNetConfig, build_unet, parameter_count, unet_forward
from .sparse import CsrMatrix, SolveReport, bicgstab, gauss_seidel, spmv
from .symbolic import (Expr, differentiate, laplacian, parse_expr,
                       random_solution, symbol_bank, to_text)
from .train import (MetricsTable, SupervisedConfig, UnsupervisedConfig,
                    evaluate, supervised_loss_grad, train_supervised,
                    train_unsupervised, unsupervised_loss_grad,
                    warmstart_benchmark)

__version__ = "0.1.0"
