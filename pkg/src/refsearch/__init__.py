"""Image classification by cosine-similarity search over synthetic references.

Pipeline: render labeled views of 3D meshes, embed them with a pluggable
encoder, persist the unit-normalized embeddings in a labeled index, then
classify query images by majority vote over their top-k most similar
references, with an F1 evaluation harness on top.
"""

from .camera import CameraPose, PerturbationSpec, sample_pose
from .encoder import EncoderManifest, encode, encode_batch, make_encoder, preprocess
from .evaluate import LabeledDataset, MetricsReport, evaluate, load_dataset, metrics_from_pairs
from .geometry import Mesh, generate_primitive, load_mesh, save_obj
from .knn import ClassifierConfig, Neighbor, Prediction, batch_classify, classify, cosine_similarity, top_k
from .rasterize import RenderConfig, RenderedImage, render
from .store import ReferenceIndex, ReferenceRecord, load_index
from .synth import generate_reference_set

__version__ = "0.1.0"
